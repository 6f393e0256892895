"""Utility scripts exposed via project entry points."""

