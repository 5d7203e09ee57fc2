"""marketlab: a laboratory for multi-unit auction and Fisher market equilibria."""

__version__ = "0.1.0"
