"""Joint maximum-likelihood estimation of phase and dephasing in differential interferometers."""

__version__ = "0.1.0"
