"""Federated model-to-data evaluation of clinical-text annotation tools."""

__version__ = "0.1.0"
