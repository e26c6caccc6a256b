"""Reduced-rank GP regression, classical and on a simulated quantum pipeline."""
__version__ = "0.1.0"
