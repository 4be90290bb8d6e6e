"""Compressed-domain motion sensing: MV-separable codec, selective decoding and two-stream CNNs."""

__version__ = "0.1.0"
