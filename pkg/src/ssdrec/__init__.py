"""Session-based package recommendation over social and dependency graphs."""

__version__ = "0.1.0"
