"""Gradient-based poisoning attacks on the group fairness of linear classifiers."""
