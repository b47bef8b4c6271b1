"""Test suite for the mrcine reconstruction pipeline."""
