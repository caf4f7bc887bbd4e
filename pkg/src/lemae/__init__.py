"""Key-state guided multi-agent exploration."""

__version__ = "0.1.0"
