"""Image embedding export through a backbone or VLM vision encoder."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from conceptcf.core import Manifest, save_matrix

from .checkpoints import encode_images, load_checkpoint

#: Default preprocessing; whatever is actually used gets written to the
#: manifest so nothing downstream has to guess.
DEFAULT_IMAGE_SIZE = 224
DEFAULT_MEAN = (0.5, 0.5, 0.5)
DEFAULT_STD = (0.5, 0.5, 0.5)


class ImageError(Exception):
    """An input image is missing or undecodable."""


def _load_image(path, size, mean, std) -> np.ndarray:
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB").resize((size, size), Image.BILINEAR)
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise ImageError(f"cannot read image {path}: {exc}") from exc
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return arr.transpose(2, 0, 1)  # HWC -> CHW


def export_image_embeddings(
    image_paths: list,
    checkpoint_path,
    out_path,
    kind: str = "features",
    image_size: int = DEFAULT_IMAGE_SIZE,
    mean=DEFAULT_MEAN,
    std=DEFAULT_STD,
    batch_size: int = 32,
    l2_normalize: bool = False,
    precision: str = "f32",
) -> int:
    """Embed images in input order and write one matrix row per image.

    ``kind`` tags the manifest: ``features`` for backbone penultimate
    features, ``vlm_embeddings`` for the joint-space vision encoder.
    Returns the embedding dimension.
    """
    image_paths = [Path(p) for p in image_paths]
    if not image_paths:
        raise ValueError("no images given")
    if kind not in ("features", "vlm_embeddings"):
        raise ValueError(f"kind must be 'features' or 'vlm_embeddings', got {kind!r}")
    module = load_checkpoint(checkpoint_path)
    chunks = []
    for start in range(0, len(image_paths), batch_size):
        batch_paths = image_paths[start : start + batch_size]
        batch = np.stack([_load_image(p, image_size, mean, std) for p in batch_paths])
        out = encode_images(module, torch.from_numpy(batch))
        chunks.append(out.double().cpu().numpy())
    embedded = np.concatenate(chunks, axis=0)
    if l2_normalize:
        embedded = embedded / np.linalg.norm(embedded, axis=1, keepdims=True)
    manifest = Manifest(
        kind=kind,
        dim=embedded.shape[1],
        names=[p.name for p in image_paths],
        extra={
            "preprocessing": {
                "resize": image_size,
                "mean": list(map(float, mean)),
                "std": list(map(float, std)),
                "pixel_scale": "1/255",
            },
            "l2_normalized": bool(l2_normalize),
            "source_checkpoint": str(checkpoint_path),
        },
    )
    save_matrix(embedded, manifest, out_path, precision=precision)
    return embedded.shape[1]
