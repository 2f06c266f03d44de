"""Dataset-bias auditing with tabular backdoors."""

__version__ = "0.1.0"
