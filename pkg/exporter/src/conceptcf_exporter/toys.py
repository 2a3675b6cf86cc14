"""Tiny deterministic checkpoints for tests and smoke runs.

Real radiology encoders are gigabytes; these stand-ins honor the same
checkpoint contracts (``encode_text`` for text, tensor-in/tensor-out for
vision, a final linear layer for heads) so the export plumbing can be
exercised end to end without downloading anything.
"""

from __future__ import annotations

import hashlib

import torch


class HashTextEncoder(torch.nn.Module):
    """Maps each prompt to a deterministic pseudo-embedding of its digest."""

    def __init__(self, dim: int = 16):
        super().__init__()
        self.dim = dim

    def encode_text(self, texts) -> torch.Tensor:
        rows = []
        for text in texts:
            digest = hashlib.sha256(str(text).encode("utf-8")).digest()
            repeated = (digest * (self.dim * 4 // len(digest) + 1))[: self.dim * 4]
            values = torch.frombuffer(bytearray(repeated), dtype=torch.int32).float()
            rows.append(values / 2**31)
        return torch.stack(rows)

    def forward(self, texts):
        return self.encode_text(texts)


def save_text_encoder(path, dim: int = 16) -> None:
    torch.save(HashTextEncoder(dim), path)


def save_vision_encoder(path, image_size: int = 32, dim: int = 8, seed: int = 0) -> None:
    """Traced flatten->linear encoder stored as TorchScript."""
    torch.manual_seed(seed)
    net = torch.nn.Sequential(
        torch.nn.Flatten(),
        torch.nn.Linear(3 * image_size * image_size, dim),
    ).eval()
    example = torch.zeros(1, 3, image_size, image_size)
    torch.jit.save(torch.jit.trace(net, example), str(path))


def save_head_checkpoint(path, feature_dim: int = 8, class_names=("No Finding", "Pathology"),
                         seed: int = 0) -> None:
    """Backbone-plus-classifier state dict with embedded class names."""
    torch.manual_seed(seed)
    state = {
        "backbone.conv.weight": torch.randn(4, 3, 3, 3),
        "backbone.fc.weight": torch.randn(16, feature_dim),
        "backbone.fc.bias": torch.randn(16),
        "classifier.weight": torch.randn(len(class_names), feature_dim),
        "classifier.bias": torch.randn(len(class_names)),
    }
    torch.save({"state_dict": state, "class_names": list(class_names)}, path)
