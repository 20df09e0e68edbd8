"""Multi-teacher embedding distillation through Gaussian kernels."""

__version__ = "0.1.0"
