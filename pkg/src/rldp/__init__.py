"""RLNC over dominant-pruning broadcast: simulator and analytic model."""

__version__ = "0.1.0"
