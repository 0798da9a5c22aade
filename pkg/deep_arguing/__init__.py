"""Deep Arguing: learned edge-weighted argumentation classifiers."""

__version__ = "0.1.0"
