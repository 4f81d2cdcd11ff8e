"""Complex neural spatial filter toolkit."""

__version__ = "0.1.0"
