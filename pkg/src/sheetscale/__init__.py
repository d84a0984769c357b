"""Thin-sheet energy functionals: cone and spherical-cap models."""

__version__ = "0.1.0"
