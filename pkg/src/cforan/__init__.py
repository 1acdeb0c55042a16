"""Cell-free O-RAN digital twin."""

__version__ = "0.1.0"
