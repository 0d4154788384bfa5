"""Object-centric video anomaly detection with self-supervised proxy tasks."""

__version__ = "0.1.0"
