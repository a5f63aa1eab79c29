"""Tweet misinformation classification from pooled contextual embeddings."""

__version__ = "0.1.0"
