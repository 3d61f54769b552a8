"""Graph-network executor for value iteration on random MDPs."""

__version__ = "0.1.0"
