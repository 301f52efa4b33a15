"""Point-annotated image classification: preprocessing, hand-crafted feature
channels, a from-scratch convolutional network, and confusion-matrix
reporting, driven end to end by a CLI."""

__version__ = "0.1.0"
