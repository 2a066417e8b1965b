"""Bounded-rationality adversarial RL for 2-D navigation."""

__version__ = "0.1.0"
