"""Diverse M-best structured prediction package."""
