"""Concept bank: named unit directions in the joint embedding space.

A concept direction is the normalized difference between the embedding of a
concept-bearing ("stimuli") prompt and a fixed baseline ("neutral") prompt.
The engine only ever sees already-embedded prompts; running a text encoder is
an exporter concern.  Prompt template strings may ride along in manifests for
provenance but are never executed here.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Manifest, as_matrix, as_vector, l2_normalize, load_matrix, save_matrix
from .errors import (
    DataError,
    DegenerateConcept,
    DimensionMismatch,
    DuplicateName,
    EmptyBank,
    ManifestError,
    UnknownConcept,
    ZeroVector,
)

#: Max deviation from unit length tolerated for a bank row.
UNIT_NORM_TOL = 1e-9

#: Layout tags for prompt-pair files, recorded in the manifest.
LAYOUT_ALTERNATING = "alternating"
LAYOUT_SHARED_NEUTRAL = "shared_neutral"


@dataclass(frozen=True)
class PromptPairEmbedding:
    """Embedded neutral/stimuli prompt pair for one named concept."""

    concept_name: str
    neutral: np.ndarray
    stimuli: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "neutral", as_vector(self.neutral, "neutral embedding"))
        object.__setattr__(self, "stimuli", as_vector(self.stimuli, "stimuli embedding"))
        if self.neutral.shape != self.stimuli.shape:
            raise DimensionMismatch(
                f"{self.concept_name}: neutral dim {self.neutral.shape[0]} != "
                f"stimuli dim {self.stimuli.shape[0]}"
            )


@dataclass(frozen=True)
class ConceptBank:
    """Immutable bank of unit-norm concept directions, one row per concept."""

    names: tuple[str, ...]
    directions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        object.__setattr__(self, "directions", as_matrix(self.directions, "concept directions"))
        if self.directions.shape[0] == 0:
            raise EmptyBank("a concept bank needs at least one concept")
        if len(self.names) != self.directions.shape[0]:
            raise DimensionMismatch(
                f"{len(self.names)} names for {self.directions.shape[0]} direction rows"
            )
        if len(set(self.names)) != len(self.names):
            dupes = sorted({n for n in self.names if self.names.count(n) > 1})
            raise DuplicateName(f"duplicate concept name(s): {', '.join(dupes)}")
        norms = np.linalg.norm(self.directions, axis=1)
        off = np.abs(norms - 1.0)
        if np.any(off > UNIT_NORM_TOL):
            worst = int(np.argmax(off))
            raise DataError(
                f"concept {self.names[worst]!r} has norm {norms[worst]:.12f}, "
                f"outside unit tolerance {UNIT_NORM_TOL:g}"
            )

    @property
    def size(self) -> int:
        return self.directions.shape[0]

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownConcept(f"concept {name!r} is not in the bank") from None

    def __contains__(self, name: str) -> bool:
        return name in self.names


def concept_direction(pair: PromptPairEmbedding) -> np.ndarray:
    """Unit direction from the neutral embedding toward the stimuli embedding."""
    diff = pair.stimuli - pair.neutral
    try:
        return l2_normalize(diff)
    except ZeroVector:
        raise DegenerateConcept([pair.concept_name]) from None


def build_bank(pairs) -> ConceptBank:
    """Build a bank from prompt pairs, one row per pair in input order.

    The whole build fails if any pair is degenerate; all offenders are listed
    in the raised :class:`DegenerateConcept`.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyBank("no prompt pairs given")
    dim = pairs[0].neutral.shape[0]
    names = []
    for p in pairs:
        if p.neutral.shape[0] != dim:
            raise DimensionMismatch(
                f"{p.concept_name}: dim {p.neutral.shape[0]} != first pair's dim {dim}"
            )
        if p.concept_name in names:
            raise DuplicateName(f"duplicate concept name: {p.concept_name!r}")
        names.append(p.concept_name)
    degenerate = []
    rows = np.empty((len(pairs), dim), dtype=np.float64)
    for i, p in enumerate(pairs):
        try:
            rows[i] = concept_direction(p)
        except DegenerateConcept:
            degenerate.append(p.concept_name)
    if degenerate:
        raise DegenerateConcept(degenerate)
    return ConceptBank(names=tuple(names), directions=rows)


def add_concept(bank: ConceptBank, pair: PromptPairEmbedding) -> ConceptBank:
    """Return a new bank with one extra concept; the input bank is unchanged."""
    if pair.concept_name in bank.names:
        raise DuplicateName(f"concept {pair.concept_name!r} already in the bank")
    if pair.neutral.shape[0] != bank.dim:
        raise DimensionMismatch(
            f"{pair.concept_name}: dim {pair.neutral.shape[0]} != bank dim {bank.dim}"
        )
    direction = concept_direction(pair)
    return ConceptBank(
        names=bank.names + (pair.concept_name,),
        directions=np.vstack([bank.directions, direction[None, :]]),
    )


def remove_concept(bank: ConceptBank, name: str) -> ConceptBank:
    """Return a new bank without ``name``; relative order of the rest is kept."""
    idx = bank.index(name)
    if bank.size == 1:
        raise EmptyBank(f"removing {name!r} would leave an empty bank")
    keep = [i for i in range(bank.size) if i != idx]
    return ConceptBank(
        names=tuple(bank.names[i] for i in keep),
        directions=np.ascontiguousarray(bank.directions[keep]),
    )


# --- disk formats ---------------------------------------------------------

def save_bank(bank: ConceptBank, path, extra: dict | None = None, precision: str = "f64") -> None:
    """Store a bank as one EBF matrix with kind ``concept_bank``."""
    manifest = Manifest(
        kind="concept_bank", dim=bank.dim, names=list(bank.names), extra=dict(extra or {})
    )
    save_matrix(bank.directions, manifest, path, precision=precision)


def load_bank(path) -> ConceptBank:
    """Load a bank written by :func:`save_bank` (or an equivalent CSV)."""
    matrix, manifest = load_matrix(path)
    if manifest.names is None:
        raise ManifestError(f"{path}: concept bank needs row names in its manifest")
    return ConceptBank(names=tuple(manifest.names), directions=matrix)


def save_prompt_pairs(pairs, path, precision: str = "f64", extra: dict | None = None) -> None:
    """Store explicit prompt pairs as alternating neutral/stimuli rows.

    Row ``2*i`` is the neutral embedding of pair ``i``, row ``2*i + 1`` its
    stimuli embedding.  Concept names live in ``extra["concepts"]``.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyBank("no prompt pairs to save")
    dim = pairs[0].neutral.shape[0]
    rows = np.empty((2 * len(pairs), dim), dtype=np.float64)
    for i, p in enumerate(pairs):
        rows[2 * i] = p.neutral
        rows[2 * i + 1] = p.stimuli
    manifest = Manifest(
        kind="prompt_pairs",
        dim=dim,
        names=None,
        extra={
            **(extra or {}),
            "layout": LAYOUT_ALTERNATING,
            "concepts": [p.concept_name for p in pairs],
        },
    )
    save_matrix(rows, manifest, path, precision=precision)


def save_shared_neutral_pairs(
    names, neutral, stimuli, path, precision: str = "f64", extra: dict | None = None
) -> None:
    """Store the shared-neutral layout: row 0 = neutral, rows 1.. = stimuli."""
    neutral = as_vector(neutral, "neutral embedding")
    stimuli = as_matrix(stimuli, "stimuli matrix")
    names = [str(n) for n in names]
    if stimuli.shape[0] != len(names):
        raise DimensionMismatch(f"{len(names)} names for {stimuli.shape[0]} stimuli rows")
    if stimuli.shape[1] != neutral.shape[0]:
        raise DimensionMismatch(
            f"stimuli dim {stimuli.shape[1]} != neutral dim {neutral.shape[0]}"
        )
    rows = np.vstack([neutral[None, :], stimuli])
    manifest = Manifest(
        kind="prompt_pairs",
        dim=neutral.shape[0],
        names=None,
        extra={**(extra or {}), "layout": LAYOUT_SHARED_NEUTRAL, "concepts": names},
    )
    save_matrix(rows, manifest, path, precision=precision)


def load_prompt_pairs(path) -> list[PromptPairEmbedding]:
    """Read prompt pairs from either EBF layout, or from a tiny-test CSV.

    A CSV must contain a column literally named ``neutral``; every other
    column is one concept's stimuli embedding sharing that neutral.
    """
    matrix, manifest = load_matrix(path)
    if Path(path).suffix.lower() == ".csv":
        names = list(manifest.names or [])
        if "neutral" not in names:
            raise ManifestError(f"{path}: prompt-pair CSV needs a column named 'neutral'")
        n_idx = names.index("neutral")
        neutral = matrix[n_idx]
        return [
            PromptPairEmbedding(concept_name=names[i], neutral=neutral, stimuli=matrix[i])
            for i in range(len(names))
            if i != n_idx
        ]
    layout = manifest.extra.get("layout")
    concepts = manifest.extra.get("concepts")
    if layout not in (LAYOUT_ALTERNATING, LAYOUT_SHARED_NEUTRAL) or concepts is None:
        raise ManifestError(
            f"{path}: prompt-pair manifest needs extra.layout "
            f"({LAYOUT_ALTERNATING!r} or {LAYOUT_SHARED_NEUTRAL!r}) and extra.concepts"
        )
    concepts = [str(c) for c in concepts]
    if layout == LAYOUT_ALTERNATING:
        if matrix.shape[0] != 2 * len(concepts):
            raise ManifestError(
                f"{path}: alternating layout expects {2 * len(concepts)} rows, "
                f"found {matrix.shape[0]}"
            )
        return [
            PromptPairEmbedding(
                concept_name=name, neutral=matrix[2 * i], stimuli=matrix[2 * i + 1]
            )
            for i, name in enumerate(concepts)
        ]
    if matrix.shape[0] != len(concepts) + 1:
        raise ManifestError(
            f"{path}: shared-neutral layout expects {len(concepts) + 1} rows, "
            f"found {matrix.shape[0]}"
        )
    neutral = matrix[0]
    return [
        PromptPairEmbedding(concept_name=name, neutral=neutral, stimuli=matrix[i + 1])
        for i, name in enumerate(concepts)
    ]
