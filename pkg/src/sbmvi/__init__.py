"""Bayesian inference for the binary undirected stochastic blockmodel."""
