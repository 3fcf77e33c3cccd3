"""Pydantic schemas for configuration, logs, manifests and reports."""
