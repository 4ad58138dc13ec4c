"""stepweld: distant supervision of procedural steps from narrated video.

Pseudo-labels narration segments by matching their language embeddings
against a textual knowledge base of task steps, trains segment-level models
under cross-entropy / distribution-matching / NCE objectives, and evaluates
long-term transformer models (task classification, KB transfer, step
forecasting) on top of the learned step embeddings.
"""

__version__ = "0.1.0"

from . import assignment, corpus, embedding, harness, longterm, segment_model  # noqa: F401
