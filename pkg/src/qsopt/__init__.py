"""Joint q-space sampling optimization and reconstruction at desk scale."""

__version__ = "0.1.0"
