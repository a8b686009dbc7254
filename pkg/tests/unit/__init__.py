"""
Unit tests for the solver components
"""
