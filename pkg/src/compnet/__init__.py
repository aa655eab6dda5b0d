"""Sparse network lasso for compositional data."""
