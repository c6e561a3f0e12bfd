"""Continual learning via per-task output heads on a shared masked trunk:
each task trains as a rotation-augmented out-of-distribution detector behind
hard attention masks, and task-id-free prediction concatenates calibrated
task outputs."""

__version__ = "0.1.0"
