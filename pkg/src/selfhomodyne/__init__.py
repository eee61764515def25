"""Self-homodyne tomography of the twin-beam state: simulation and reconstruction."""

__version__ = "0.1.0"
