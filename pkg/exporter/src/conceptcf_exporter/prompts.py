"""Prompt-pair embedding export (shared-neutral layout)."""

from __future__ import annotations

import numpy as np

from conceptcf.bank import save_shared_neutral_pairs

from .checkpoints import encode_texts, load_checkpoint

NEUTRAL_TEMPLATE = "An image of chest xray with No Finding"
STIMULI_TEMPLATE = "An image of chest xray with {concept}"


def export_prompt_pairs(
    concepts: list[str],
    checkpoint_path,
    out_path,
    neutral_phrase: str = NEUTRAL_TEMPLATE,
    stimuli_template: str = STIMULI_TEMPLATE,
    l2_normalize: bool = False,
    precision: str = "f32",
) -> int:
    """Embed one stimuli prompt per concept plus the shared neutral prompt.

    Writes the engine's shared-neutral prompt-pair layout (row 0 = neutral,
    rows 1.. = stimuli).  The manifest records the template strings and
    whether L2 normalization was applied, so downstream consumers never have
    to guess.  Returns the joint-space dimension.
    """
    concepts = [str(c) for c in concepts]
    if not concepts:
        raise ValueError("no concepts given")
    if len(set(concepts)) != len(concepts):
        raise ValueError("concept list contains duplicates")
    module = load_checkpoint(checkpoint_path)
    prompts = [neutral_phrase] + [
        stimuli_template.format(concept=c) for c in concepts
    ]
    embedded = encode_texts(module, prompts).double().cpu().numpy()
    if l2_normalize:
        embedded = embedded / np.linalg.norm(embedded, axis=1, keepdims=True)
    save_shared_neutral_pairs(
        concepts,
        embedded[0],
        embedded[1:],
        out_path,
        precision=precision,
        extra={
            "neutral_template": neutral_phrase,
            "stimuli_template": stimuli_template,
            "l2_normalized": bool(l2_normalize),
            "source_checkpoint": str(checkpoint_path),
        },
    )
    return embedded.shape[1]
