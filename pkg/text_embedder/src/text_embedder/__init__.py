"""Text-side emotion encoder: fine-tuning and [CLS] embedding export."""

__version__ = "0.1.0"
