"""
Test package for Gauss Distill.

Unit tests per core module plus CLI and end-to-end integration tests.
"""
