"""Oracle-network simulator, sealed-urn commit-reveal and lexical query analysis."""

__version__ = "0.1.0"
