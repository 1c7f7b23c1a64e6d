"""Graph-based anomaly detection for oil & gas production networks.

Pipeline: ingest -> features -> weak labels -> windows/splits -> production
graph -> Temporal GAT / baselines -> evaluation.
"""

__version__ = "0.1.0"
