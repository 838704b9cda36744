"""Speech emotion pipeline: features, TDNN embeddings, fusion, LDA/pLDA, metrics."""

__version__ = "0.1.0"
