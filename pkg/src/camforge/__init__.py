"""camforge: a numpy CPU engine for CAM++ speaker embeddings and their analysis."""

__version__ = "0.1.0"
