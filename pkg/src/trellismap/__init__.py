"""Factor-graph mapping of persistent vineyard landmarks from sensor/detection logs."""

__version__ = "0.1.0"
