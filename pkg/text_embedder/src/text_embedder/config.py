"""Fine-tuning configuration."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class TextFinetuneConfig:
    epochs: int = 4
    learning_rate: float = 2e-5
    adam_epsilon: float = 1e-8
    grad_clip_norm: float = 1.0
    batch_size: int = 32
    max_seq_len: int = 128
    dev_fraction: float = 0.1
    seed: int = 0
    pretrained_model: str = "bert-base-uncased"  # uncased base: 12 layers x 768

    def __post_init__(self):
        positive = {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "adam_epsilon": self.adam_epsilon,
            "grad_clip_norm": self.grad_clip_norm,
            "batch_size": self.batch_size,
            "max_seq_len": self.max_seq_len,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not (0.0 < self.dev_fraction < 1.0):
            raise ValueError(f"dev_fraction must be in (0, 1), got {self.dev_fraction}")
