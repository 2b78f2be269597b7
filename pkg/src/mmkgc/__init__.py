"""Multimodal knowledge graph completion: expert-enriched retrieval plus generative reranking."""

__version__ = "0.1.0"
