"""riskloop: margin-based active learning over clinical event-time case records.

Core pipeline: parse case records -> featurize (projected event embeddings +
normalized timestamps, zero-padded) -> attention-gated classifier -> margin
uncertainty loop, with a benchmark harness, importance reports, and an HTTP
annotation service on top.
"""

__version__ = "0.1.0"
