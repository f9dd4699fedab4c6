"""scriptannot: self-training annotation pipeline and evaluation workbench."""

__version__ = "0.1.0"
