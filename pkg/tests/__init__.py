"""
Test suite for the coupled Hamilton-Jacobi solver
"""
