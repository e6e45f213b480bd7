"""Numerical services: problem generators, factorization, parameter selection and experiments."""
