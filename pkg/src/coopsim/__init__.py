"""Cooperative-perception V2V simulator with branching dueling Q-learning."""

__version__ = "0.1.0"
