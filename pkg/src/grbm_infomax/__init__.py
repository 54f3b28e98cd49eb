"""Gaussian RBM training with approximated-mutual-information early stopping."""
