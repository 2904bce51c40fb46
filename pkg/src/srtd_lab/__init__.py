"""Skill-regularized task decomposition for multi-task offline RL."""

__version__ = "0.1.0"
