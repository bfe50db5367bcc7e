"""Tests for invcloud package."""
