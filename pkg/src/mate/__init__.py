"""Multi-agent trajectory prediction with interaction-energy stability constraints."""

__version__ = "0.1.0"
