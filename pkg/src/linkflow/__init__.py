"""Link flow estimation from detector counts and sparse trajectories."""

__version__ = "0.1.0"
