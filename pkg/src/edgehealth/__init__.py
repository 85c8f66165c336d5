"""edgehealth: deterministic desk-scale simulator for edge eHealth pipelines.

Subsystems: synthetic multi-modal signal generation and quality assessment,
windowed feature extraction with noise-aware aggregation, a pool of small
deterministic classifiers, an adaptive sense-compute controller, a seeded
discrete-event simulator of device/edge/cloud execution with calibration,
and a tabular Q-learning placement orchestrator. One CLI (``edgehealth``)
wires them together.
"""

__version__ = "0.1.0"
