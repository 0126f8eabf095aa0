"""Two-stage point-cloud generation and upsampling toolkit."""

__version__ = "0.1.0"
