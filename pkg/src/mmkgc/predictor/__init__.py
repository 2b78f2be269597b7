"""Generative predictor stage: prompts, LLM client, fine-tune export, reranking."""
