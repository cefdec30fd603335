"""Toolkit for mining, analyzing, and predicting idea recombinations in
scientific abstracts."""

__version__ = "0.1.0"
