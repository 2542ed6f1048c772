"""crossmf - Agent-based, kinetic and mean-field simulator of the Cross market model."""

__version__ = "0.1.0"
