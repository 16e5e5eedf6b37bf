"""Multimodal report generation with cross-modal-transformer fusion, built on a
small numpy autodiff engine and trained on a synthetic clinical world."""

__version__ = "0.1.0"
