"""Test suite for zubov-clf."""
