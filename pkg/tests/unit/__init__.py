"""
Unit tests for core functions.
""" 