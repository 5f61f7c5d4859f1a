"""Hybrid low-rank / orthogonal adapters with data curation and evaluation tooling."""

__version__ = "0.1.0"
