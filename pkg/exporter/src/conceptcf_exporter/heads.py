"""Classifier-head extraction: final linear layer -> engine head files."""

from __future__ import annotations

import torch

from conceptcf.perturbation import ClassifierHead, save_head

from .checkpoints import CheckpointError, load_checkpoint


def _as_state_dict(payload) -> tuple[dict, list | None]:
    """Normalize the checkpoint payload to (state_dict, class_names|None)."""
    class_names = None
    if isinstance(payload, torch.nn.Module):
        return dict(payload.state_dict()), getattr(payload, "class_names", None)
    if isinstance(payload, dict):
        if "state_dict" in payload:
            class_names = payload.get("class_names")
            payload = payload["state_dict"]
        if all(isinstance(v, torch.Tensor) for v in payload.values()):
            return dict(payload), class_names
    raise CheckpointError(
        "head checkpoint must be a module, a state dict, or a dict with 'state_dict'"
    )


def find_final_linear(state_dict: dict) -> tuple[str, torch.Tensor, torch.Tensor]:
    """Last weight/bias pair shaped like a linear layer, in state-dict order."""
    found = None
    for key, value in state_dict.items():
        if not key.endswith(".weight") and key != "weight":
            continue
        if value.ndim != 2:
            continue
        bias_key = key[: -len("weight")] + "bias"
        bias = state_dict.get(bias_key)
        if bias is None or bias.ndim != 1 or bias.shape[0] != value.shape[0]:
            continue
        found = (key, value, bias)
    if found is None:
        raise CheckpointError("no final linear layer (2-D weight with matching bias) found")
    return found


def export_head(
    checkpoint_path,
    out_dir,
    class_names: list | None = None,
    no_finding: str = "No Finding",
    precision: str = "f32",
) -> tuple[int, int]:
    """Extract the final linear layer as an engine-loadable head directory.

    Class names come from ``class_names`` when given, else from the
    checkpoint itself; the export fails rather than invent names.  Returns
    ``(n_classes, feature_dim)``.
    """
    payload = load_checkpoint(checkpoint_path)
    state_dict, embedded_names = _as_state_dict(payload)
    key, weight, bias = find_final_linear(state_dict)
    names = class_names if class_names is not None else embedded_names
    if names is None:
        raise CheckpointError(
            "checkpoint carries no class names; pass them explicitly"
        )
    names = [str(n) for n in names]
    if len(names) != weight.shape[0]:
        raise CheckpointError(
            f"{len(names)} class names for a {weight.shape[0]}-way layer ({key})"
        )
    head = ClassifierHead(
        weights=weight.double().cpu().numpy(),
        bias=bias.double().cpu().numpy(),
        class_names=tuple(names),
        no_finding=no_finding,
    )
    save_head(
        head,
        out_dir,
        extra={"source_checkpoint": str(checkpoint_path), "source_layer": key},
        precision=precision,
    )
    return head.n_classes, head.feature_dim
