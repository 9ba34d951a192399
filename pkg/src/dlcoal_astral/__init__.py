"""Gene duplication, loss and coalescence simulation with exact quartet-based species tree estimation."""

__version__ = "0.1.0"
