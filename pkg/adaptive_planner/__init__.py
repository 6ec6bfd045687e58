"""Risk-aware multi-layer local planner for quadrotors."""
__version__ = "0.1.0"
