"""magkit: permutation-orbit transport, mixture heat flows and particle diagnostics."""

__version__ = "0.1.0"
