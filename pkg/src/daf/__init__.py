"""Multimodal dialogue-act classification with speaker adaptation."""

__version__ = "0.1.0"
