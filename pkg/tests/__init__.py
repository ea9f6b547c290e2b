"""Tests for cimpcc-racing."""
