"""Greedy and random-basis function approximation benchmark."""

from randbasis._backend import BACKEND

__version__ = "0.1.0"
