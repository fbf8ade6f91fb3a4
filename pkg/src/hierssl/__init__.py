"""Taxonomy-aware semi-supervised learning on hierarchical feature data."""

__version__ = "0.1.0"
