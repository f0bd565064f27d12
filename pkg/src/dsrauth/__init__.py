"""Attribute-based eID authentication for GDPR data subject rights requests."""

__version__ = "0.1.0"
