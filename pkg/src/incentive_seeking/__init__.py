"""Incentive-seeking control of a tolled Express lane."""

__version__ = "0.1.0"
