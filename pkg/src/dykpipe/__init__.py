"""Toolkit for ingesting Wikipedia "Did You Know" facts, building knowledge
injection corpora, partitioning facts into clusters, routing queries across an
ensemble of knowledge backends, and scoring any answer function with
substring-match / token-F1 metrics."""

__version__ = "0.1.0"
