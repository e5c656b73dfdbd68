"""Road-aware labeled multi-Bernoulli tracking."""
