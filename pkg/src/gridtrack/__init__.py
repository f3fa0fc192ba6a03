"""Grid-aware model predictive control for dispatch-plan tracking."""

__version__ = "0.1.0"
