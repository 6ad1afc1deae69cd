"""
hgd-lab test suite.
"""
