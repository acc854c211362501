"""Latent-graph GFlowNet sampler for diverse conditional generation."""
