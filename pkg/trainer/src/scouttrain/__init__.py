"""Training pipeline for the heightmap refinement network."""

__version__ = "0.1.0"
