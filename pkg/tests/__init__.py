"""
Test suite for the tmrouter simulator.
"""
