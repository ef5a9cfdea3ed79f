"""Context-transformation networks for MNIST."""

__version__ = "0.1.0"
