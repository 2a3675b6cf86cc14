"""Checkpoint loading shared by all exporters.

Two on-disk forms are understood, tried in order:

1. TorchScript archives (``torch.jit.save``), loaded without needing the
   original class definitions.
2. Eager pickles (``torch.save`` of a module, a state dict, or a dict
   wrapping one).  These require the defining classes to be importable and
   are loaded with ``weights_only=False``, so only feed trusted files.

Text encoders must expose ``encode_text(texts) -> (n, k)`` (tokenization
lives inside the checkpoint).  Vision encoders are called on a float image
batch ``(n, 3, s, s)``, via ``encode_image`` when present, else directly.
"""

from __future__ import annotations

from pathlib import Path

import torch


class CheckpointError(Exception):
    """Checkpoint missing, unreadable, or lacking the expected interface."""


class TokenizerError(Exception):
    """The checkpoint's text path failed on the given prompts."""


def load_checkpoint(path):
    """Load a TorchScript or eager checkpoint in inference mode."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        module = torch.jit.load(str(path), map_location="cpu")
    except (RuntimeError, ValueError):
        try:
            module = torch.load(str(path), map_location="cpu", weights_only=False)
        except Exception as exc:
            raise CheckpointError(f"{path}: cannot load checkpoint: {exc}") from exc
    if isinstance(module, torch.nn.Module):
        module.eval()
    return module


def encode_texts(module, texts: list[str]) -> torch.Tensor:
    """Run the checkpoint's text path on a list of prompts."""
    encode = getattr(module, "encode_text", None)
    if encode is None:
        raise CheckpointError(
            "checkpoint has no encode_text(texts) method; not a text encoder"
        )
    try:
        with torch.no_grad():
            out = encode(list(texts))
    except Exception as exc:
        raise TokenizerError(f"text encoding failed: {exc}") from exc
    out = torch.as_tensor(out)
    if out.ndim != 2 or out.shape[0] != len(texts):
        raise CheckpointError(
            f"encode_text returned shape {tuple(out.shape)} for {len(texts)} prompts"
        )
    return out


def encode_images(module, batch: torch.Tensor) -> torch.Tensor:
    """Run the checkpoint's vision path on a preprocessed image batch."""
    forward = getattr(module, "encode_image", None) or module
    try:
        with torch.no_grad():
            out = forward(batch)
    except Exception as exc:
        raise CheckpointError(f"image encoding failed: {exc}") from exc
    out = torch.as_tensor(out)
    if out.ndim != 2 or out.shape[0] != batch.shape[0]:
        raise CheckpointError(
            f"vision encoder returned shape {tuple(out.shape)} for a batch of {batch.shape[0]}"
        )
    return out
