"""Reconstruction stages: raw depth, priors, aggregation, fusion and the full pipeline."""
