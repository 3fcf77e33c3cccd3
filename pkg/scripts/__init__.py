"""Experiment scripts built on the gaitadapt commands."""
