"""Free-grain hierarchical classification toolkit."""

__version__ = "0.1.0"
