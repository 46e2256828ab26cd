"""Pattern-based anomaly detection for cloud compute-node performance metrics."""

__version__ = "0.1.0"
