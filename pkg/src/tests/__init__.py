"""Tests for Proto Adapt."""
