"""Quantitative scoring: recall@k, top-1 sanity rate, coverage, latency."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .bank import ConceptBank
from .core import as_matrix
from .errors import (
    DataError,
    EmptyGroundTruth,
    EmptyList,
    InvalidConfig,
    MissingLabelConcept,
)
from .perturbation import (
    TOWARD_TARGET,
    ClassifierHead,
    ExplanationResult,
    PerturbationConfig,
    RankedConcepts,
    optimize_perturbation,
    rank_concepts,
)
from .projector import ProjectorPair
from .synth import SynthWorld


@dataclass(frozen=True)
class GroundTruthFindings:
    """Radiologist-style finding lists for one pathology."""

    pathology: str
    primary: tuple[str, ...]
    secondary: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "primary", tuple(str(n) for n in self.primary))
        object.__setattr__(self, "secondary", tuple(str(n) for n in self.secondary))
        if not self.primary:
            raise EmptyGroundTruth(f"{self.pathology}: primary findings must be nonempty")


def load_ground_truth(path) -> dict[str, GroundTruthFindings]:
    """Read a JSON file mapping pathology -> {primary: [...], secondary: [...]}."""
    payload = json.loads(Path(path).read_text())
    if not isinstance(payload, dict) or not payload:
        raise DataError(f"{path}: expected a nonempty pathology mapping")
    out = {}
    for pathology, lists in payload.items():
        out[pathology] = GroundTruthFindings(
            pathology=pathology,
            primary=tuple(lists.get("primary", ())),
            secondary=tuple(lists.get("secondary", ())),
        )
    return out


def recall_at_k(ranking, ground_truth: Sequence[str], k: int) -> float:
    """Fraction of ground-truth names present among the top-k of a ranking."""
    if isinstance(ranking, RankedConcepts):
        names = ranking.names()
    else:
        names = [str(n) for n in ranking]
    gt = {str(n) for n in ground_truth}
    if not gt:
        raise EmptyGroundTruth("ground-truth list is empty")
    if k < 1:
        raise InvalidConfig("k must be >= 1")
    top = set(names[:k])
    return len(top & gt) / len(gt)


def coverage(results: Sequence[ExplanationResult]) -> float:
    """Fraction of results whose prediction flipped within the step budget."""
    results = list(results)
    if not results:
        raise EmptyList("coverage over zero results is undefined")
    return sum(1 for r in results if r.flipped) / len(results)


@dataclass(frozen=True)
class LatencySummary:
    n: int
    mean_s: float
    p50_s: float
    p95_s: float

    def to_dict(self) -> dict:
        return {"n": self.n, "mean_s": self.mean_s, "p50_s": self.p50_s, "p95_s": self.p95_s}


def latency_report(samples_s: Sequence[float]) -> LatencySummary:
    """Aggregate per-explanation wall-clock samples (seconds)."""
    arr = np.asarray(list(samples_s), dtype=np.float64)
    if arr.size == 0:
        raise EmptyList("latency report over zero samples is undefined")
    return LatencySummary(
        n=int(arr.size),
        mean_s=float(arr.mean()),
        p50_s=float(np.percentile(arr, 50)),
        p95_s=float(np.percentile(arr, 95)),
    )


def top1_sanity(
    features,
    bank: ConceptBank,
    pair: ProjectorPair,
    head: ClassifierHead,
    target: int,
    label_concept: str,
    cfg: PerturbationConfig | None = None,
) -> float:
    """Fraction of instances whose top-added concept is the label-aligned one.

    Runs the optimizer on every feature row toward ``target``; failed flips
    count against the rate.  The label-aligned concept must be in the bank.
    """
    if label_concept not in bank:
        raise MissingLabelConcept(f"{label_concept!r} is not in the bank")
    rows = as_matrix(features, "features")
    if rows.shape[0] == 0:
        raise EmptyList("no instances supplied")
    hits = 0
    for f in rows:
        result = optimize_perturbation(f, bank, pair, head, target, cfg)
        if not result.flipped:
            continue
        top = rank_concepts(result, bank, 1, TOWARD_TARGET)
        if top.entries[0][0] == label_concept:
            hits += 1
    return hits / rows.shape[0]


def top1_sanity_world(
    world: SynthWorld, n: int | None = None, target: int = 1,
    cfg: PerturbationConfig | None = None,
) -> float:
    """Run :func:`top1_sanity` on the first ``n`` non-target world instances."""
    mask = world.labels != target
    rows = world.instances[mask]
    if n is not None:
        rows = rows[:n]
    return top1_sanity(
        rows,
        world.bank,
        world.projector_pair(),
        world.head,
        target,
        world.planted_concept_name(target),
        cfg,
    )


# --- report assembly -------------------------------------------------------

FINDING_TYPES = ("primary", "secondary")


@dataclass(frozen=True)
class RecallCell:
    model_tag: str
    pathology: str
    finding_type: str
    k: int
    mean_recall: float | None
    n_instances: int
    gt_size: int


@dataclass
class EvalReport:
    """Mean recall per (model, pathology, finding type, k) plus coverage."""

    cells: list[RecallCell]
    coverage: dict          # (model, pathology) -> {"coverage": .., "n_total": ..}
    latency: LatencySummary | None = None

    def to_dict(self) -> dict:
        nested: dict = {}
        for cell in self.cells:
            model = nested.setdefault(cell.model_tag, {})
            pathology = model.setdefault(cell.pathology, {"recall": {}})
            by_type = pathology["recall"].setdefault(cell.finding_type, {})
            by_type[str(cell.k)] = cell.mean_recall
            pathology["n_scored"] = cell.n_instances
        for (model_tag, pathology), cov in self.coverage.items():
            nested.setdefault(model_tag, {}).setdefault(pathology, {"recall": {}}).update(cov)
        payload = {"models": nested}
        if self.latency is not None:
            payload["latency"] = self.latency.to_dict()
        return payload


def score_rankings(
    rankings: dict,
    ground_truth: dict[str, GroundTruthFindings],
    k_values: Sequence[int],
) -> list[RecallCell]:
    """Mean per-instance recall over grouped full rankings.

    ``rankings`` maps ``(model_tag, pathology)`` to a list of full name
    rankings (flipped instances only).  Pathologies without ground truth are
    skipped; pathologies without flipped instances produce cells with
    ``n_instances == 0`` and no recall value.
    """
    cells = []
    for (model_tag, pathology), ranked_lists in sorted(rankings.items()):
        gt = ground_truth.get(pathology)
        if gt is None:
            continue
        for finding_type in FINDING_TYPES:
            gt_names = getattr(gt, finding_type)
            for k in k_values:
                if not gt_names:
                    continue
                if ranked_lists:
                    values = [recall_at_k(names, gt_names, k) for names in ranked_lists]
                    mean = float(np.mean(values))
                else:
                    mean = None
                cells.append(
                    RecallCell(
                        model_tag=model_tag,
                        pathology=pathology,
                        finding_type=finding_type,
                        k=int(k),
                        mean_recall=mean,
                        n_instances=len(ranked_lists),
                        gt_size=len(gt_names),
                    )
                )
    return cells


def render_recall_table(report: EvalReport, k_values: Sequence[int]) -> str:
    """Aligned plain-text table: pathology x finding type, one R@k column set
    per model tag."""
    models = sorted({c.model_tag for c in report.cells})
    by_key = {
        (c.model_tag, c.pathology, c.finding_type, c.k): c for c in report.cells
    }
    pathologies = sorted({c.pathology for c in report.cells})

    headers = ["Pathology", "Finding"]
    for model in models:
        for k in k_values:
            headers.append(f"{model} R@{k}")
    rows = [headers]
    for pathology in pathologies:
        for finding_type in FINDING_TYPES:
            any_cell = next(
                (
                    by_key.get((m, pathology, finding_type, k))
                    for m in models
                    for k in k_values
                    if by_key.get((m, pathology, finding_type, k)) is not None
                ),
                None,
            )
            if any_cell is None:
                continue
            # parenthetical = size of the ground-truth list, as in the
            # reference layout "Primary(1)"
            row = [pathology, f"{finding_type.capitalize()}({any_cell.gt_size})"]
            for model in models:
                for k in k_values:
                    cell = by_key.get((model, pathology, finding_type, k))
                    if cell is None or cell.mean_recall is None:
                        row.append("-")
                    else:
                        row.append(f"{cell.mean_recall:.2f}")
            rows.append(row)

    widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
    lines = []
    for r in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
    return "\n".join(lines) + "\n"
