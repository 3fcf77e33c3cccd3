"""Model, part-knowledge module and losses."""
