"""Taxi gridworld toolkit: neural wizard controller, decision-tree magic books,
game-based controller synthesis, and SMT-backed bounded model checking."""

__version__ = "0.1.0"
