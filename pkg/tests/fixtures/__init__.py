"""
Test fixtures and helper utilities
"""
