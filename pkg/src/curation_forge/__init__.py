"""curation-forge: batch toolkit for building indicator-balanced,
crowd-rated image quality datasets at any scale."""

__version__ = "0.1.0"
