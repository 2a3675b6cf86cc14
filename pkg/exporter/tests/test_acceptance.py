"""Exporter integration criterion: everything written here loads in the
engine with matching manifest dims, and an exported head behaves like the
checkpoint's final layer."""

import numpy as np

from conceptcf.core import load_matrix
from conceptcf.perturbation import classify, load_head

from conceptcf_exporter.cli import (
    head_main,
    image_features_main,
    prompt_pairs_main,
    vlm_embeddings_main,
)

from conftest import IMAGE_SIZE


def report(name, passed, details):
    print(f"ACCEPTANCE {name}: {'PASS' if passed else 'FAIL'} ({details})")
    assert passed, f"{name}: {details}"


def test_every_export_script_round_trips(
    tmp_path, text_checkpoint, vision_checkpoint, head_checkpoint, image_files
):
    concepts_file = tmp_path / "concepts.txt"
    concepts_file.write_text("enlarged silhouette\npleural effusion\npacemaker\n")
    images_file = tmp_path / "images.txt"
    images_file.write_text("\n".join(str(p) for p in image_files))

    runs = [
        ("prompt pairs", prompt_pairs_main, [
            "--concepts", str(concepts_file), "--checkpoint", str(text_checkpoint),
            "--out", str(tmp_path / "pairs.ebf"),
        ], tmp_path / "pairs.ebf", 4),       # 3 stimuli + shared neutral
        ("image features", image_features_main, [
            "--images", str(images_file), "--checkpoint", str(vision_checkpoint),
            "--out", str(tmp_path / "features.ebf"), "--image-size", str(IMAGE_SIZE),
        ], tmp_path / "features.ebf", 3),
        ("vlm embeddings", vlm_embeddings_main, [
            "--images", str(images_file), "--checkpoint", str(vision_checkpoint),
            "--out", str(tmp_path / "vlm.ebf"), "--image-size", str(IMAGE_SIZE),
        ], tmp_path / "vlm.ebf", 3),
    ]
    problems = []
    for name, main, argv, out_path, expected_rows in runs:
        if main(argv) != 0:
            problems.append(f"{name}: nonzero exit")
            continue
        matrix, manifest = load_matrix(out_path)
        if matrix.shape[0] != expected_rows or manifest.dim != matrix.shape[1]:
            problems.append(
                f"{name}: shape {matrix.shape} vs manifest dim {manifest.dim}"
            )
        if manifest.names is not None and len(manifest.names) != matrix.shape[0]:
            problems.append(f"{name}: names/rows mismatch")

    code = head_main([
        "--checkpoint", str(head_checkpoint), "--out", str(tmp_path / "head"),
    ])
    if code != 0:
        problems.append("head: nonzero exit")
    report(
        "exporter round trip",
        not problems,
        "all export scripts produced engine-loadable files with matching dims"
        if not problems
        else "; ".join(problems),
    )


def test_zero_vector_probe_recovers_bias(tmp_path, head_checkpoint):
    import torch

    assert head_main([
        "--checkpoint", str(head_checkpoint), "--out", str(tmp_path / "head"),
    ]) == 0
    head = load_head(tmp_path / "head")
    logits = classify(head, np.zeros(head.feature_dim))
    source = torch.load(head_checkpoint, map_location="cpu", weights_only=False)
    expected = source["state_dict"]["classifier.bias"].double().numpy()
    worst = float(np.max(np.abs(logits - expected)))
    report(
        "zero-vector head probe",
        worst < 1e-6,
        f"max |logits - checkpoint bias| = {worst:.2e} (need <1e-6)",
    )
