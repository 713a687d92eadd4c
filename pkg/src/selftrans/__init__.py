"""Self-translate evaluation harness for multilingual language models."""

__version__ = "0.1.0"
