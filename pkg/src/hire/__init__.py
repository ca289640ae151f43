"""Exploration bonuses for PPO: reward modules, ways of combining them, gridworlds and result analysis."""

__version__ = "0.1.0"
