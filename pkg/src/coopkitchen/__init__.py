"""Cooperative kitchen gridworld: environment, planners, learning, serving."""

__version__ = "0.1.0"
