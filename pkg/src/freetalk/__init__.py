"""Emotion-conditioned, topology-agnostic speech-to-face animation."""

__version__ = "0.1.0"
