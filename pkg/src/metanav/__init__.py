"""Hierarchical visual navigation: low-level DQN behaviors sequenced by a meta-level DQN."""

__version__ = "0.1.0"
