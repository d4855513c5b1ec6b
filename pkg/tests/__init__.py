"""Test suite for the gradient_standin package."""
