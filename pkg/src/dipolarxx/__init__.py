"""Quench dynamics of planar XX magnets with power-law couplings.

Exact sector-blocked evolution, a Dicke-sector one-axis-twisting reference,
pair-product variational Monte Carlo and the analyses built on them.
"""
__version__ = "0.1.0"
