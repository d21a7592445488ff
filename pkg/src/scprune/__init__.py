"""Filter pruning for CNNs via subspace clustering of feature maps."""

__version__ = "0.1.0"
