"""Thin adapters that pull real-world inputs out of pretrained torch
checkpoints and write them in the interchange format the conceptcf engine
consumes.

Four export kinds: prompt-pair text embeddings, backbone image features,
VLM image embeddings, and classifier heads.  No math happens here beyond
optional L2 normalization (always recorded in the manifest, never silent);
concept directions, projector training, and perturbation learning all live
in the engine.
"""

from .checkpoints import CheckpointError, TokenizerError, load_checkpoint
from .heads import export_head
from .images import ImageError, export_image_embeddings
from .prompts import export_prompt_pairs

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ImageError",
    "TokenizerError",
    "export_head",
    "export_image_embeddings",
    "export_prompt_pairs",
    "load_checkpoint",
]
