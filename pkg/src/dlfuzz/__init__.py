"""Search-based generation and detection of multi-vehicle deadlock scenarios."""

__version__ = "0.1.0"
