"""Recipe-generation training and evaluation toolkit at desk scale."""

__version__ = "0.1.0"
