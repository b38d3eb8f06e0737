"""
Tests for the csev evidence library and command-line tool.
"""
