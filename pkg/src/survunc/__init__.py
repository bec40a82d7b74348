"""Post-hoc uncertainty quantification for survival models via anchor-based meta-labels."""

__version__ = "0.1.0"
