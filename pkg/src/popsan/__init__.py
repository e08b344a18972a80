"""Population-coded spiking actor networks trained with surrogate gradients."""

__version__ = "0.1.0"
