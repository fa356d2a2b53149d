"""
Test suite for cst-seld.
"""
