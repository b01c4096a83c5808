"""Desk-scale stance detection: topic-aware and topic-agnostic embeddings
pre-trained with contrastive objectives and fused by scaled dot-product
attention into a three-way stance classifier."""

__version__ = "0.1.0"
