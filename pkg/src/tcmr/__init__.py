"""Temporal cross-media retrieval: subspace learning over timestamped image-text corpora."""

__version__ = "0.1.0"
