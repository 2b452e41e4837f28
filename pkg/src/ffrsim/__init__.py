"""Battery-module scheduling simulator for fast frequency response."""

__version__ = "0.1.0"
