"""Clickstream sequence mining and per-video CFA prediction toolkit."""

__version__ = "0.1.0"

from clickmine.events import EVENT_ALPHABET

__all__ = ["EVENT_ALPHABET", "__version__"]
