"""Synthetic joint-embedding worlds with a planted ground-truth concept.

A world consists of a near-orthonormal concept bank in the joint space, an
exactly linear ground-truth map ``A`` (row-orthonormal, so its pseudoinverse
is its transpose) between classifier and joint spaces, a binary classifier
head whose pathology logit is aligned through ``A`` with one planted concept,
and a set of "no finding" instances sitting at a controlled margin from the
decision boundary.  Because the map is exactly invertible on the instances,
optimizer failures cannot be blamed on projector error, and the minimal
single-concept flip is the planted concept by construction.

The brute-force line-search oracle is the independent check used to validate
the whole perturbation optimizer: it scans each concept separately and finds
the smallest scalar displacement that flips the prediction, working directly
on the world's matrices rather than the engine's projector machinery.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bank import ConceptBank, load_bank, save_bank
from .core import Manifest, load_matrix, save_matrix, spawn_rngs, write_json
from .errors import (
    AlreadyTarget,
    DataError,
    Infeasible,
    InfeasibleConfig,
    InvalidConfig,
    InvalidTarget,
    ManifestError,
)
from .perturbation import ClassifierHead, classify, load_head, save_head
from .projector import ProjectorPair, linear_pair, save_projector_pair

#: Logit gain along the planted concept direction; sized so the default
#: optimizer budget (100 steps at lr 1e-2) flips comfortably.
GAIN = 2.0

#: Amplitude of the uniform noise added to the orthonormal concept basis.
CONCEPT_NOISE = 0.02

NO_FINDING = "No Finding"
PATHOLOGY = "Pathology"

WORLD_MANIFEST = "world.manifest.json"


@dataclass(frozen=True)
class SynthWorld:
    """Generated universe: bank, exact map, head, instances, and labels."""

    map_a: np.ndarray       # (k, d), row-orthonormal
    map_a_pinv: np.ndarray  # (d, k), equals map_a.T
    bank: ConceptBank
    head: ClassifierHead
    instances: np.ndarray   # (n, d)
    labels: np.ndarray      # (n,)
    planted: dict           # class index -> concept index
    margin: float
    seed: int

    @property
    def dim_clf(self) -> int:
        return self.map_a.shape[1]

    @property
    def dim_vlm(self) -> int:
        return self.map_a.shape[0]

    @property
    def n_instances(self) -> int:
        return self.instances.shape[0]

    def projector_pair(self) -> ProjectorPair:
        """The world's exact projectors (the map and its pseudoinverse)."""
        return linear_pair(self.map_a, self.map_a_pinv)

    def planted_concept_name(self, target_class: int) -> str:
        if target_class not in self.planted:
            raise InvalidTarget(f"class {target_class} has no planted concept")
        return self.bank.names[self.planted[target_class]]


def _orthonormal_rows(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    """Seeded orthonormal rows via Gram-Schmidt (no LAPACK, so the result is
    a pure function of the stream).  Projections run twice for stability."""
    out = np.empty((rows, dim), dtype=np.float64)
    i = 0
    while i < rows:
        v = rng.standard_normal(dim)
        for _ in range(2):
            if i:
                v = v - (out[:i] @ v) @ out[:i]
        norm = float(np.linalg.norm(v))
        if norm < 1e-6:  # essentially never; redraw keeps determinism
            continue
        out[i] = v / norm
        i += 1
    return out


def gen_world(
    d: int, k: int, n_concepts: int, n_instances: int, margin: float, seed: int
) -> SynthWorld:
    """Deterministically generate a planted world.

    Requires ``n_concepts <= k`` (near-orthogonal directions must fit) and
    ``k <= d`` (the ground-truth map must be exactly invertible on the
    instances).  All "no finding" instances have a no-finding-minus-pathology
    logit lead of at least ``margin``.
    """
    if n_concepts > k:
        raise InfeasibleConfig(f"{n_concepts} near-orthogonal concepts cannot fit in dim {k}")
    if k > d:
        raise InfeasibleConfig(f"joint dim {k} must not exceed classifier dim {d}")
    if margin <= 0.0:
        raise InvalidConfig("margin must be positive")
    if n_concepts < 1 or n_instances < 1:
        raise InvalidConfig("need at least one concept and one instance")

    rng_bank, rng_map, rng_planted, rng_inst = spawn_rngs(seed, 4)

    basis = _orthonormal_rows(rng_bank, n_concepts, k)
    noise = rng_bank.uniform(-CONCEPT_NOISE, CONCEPT_NOISE, size=(n_concepts, k))
    directions = basis + noise
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    bank = ConceptBank(
        names=tuple(f"concept_{i:03d}" for i in range(n_concepts)),
        directions=directions,
    )

    map_a = _orthonormal_rows(rng_map, k, d)
    map_a_pinv = np.ascontiguousarray(map_a.T)

    planted_idx = int(rng_planted.integers(n_concepts))
    planted_dir = bank.directions[planted_idx]

    # pathology logit rises at rate ~GAIN per unit step along the planted
    # concept in joint space; the no-finding logit falls at the same rate
    w_pathology = GAIN * (map_a_pinv @ planted_dir)
    head = ClassifierHead(
        weights=np.vstack([-w_pathology, w_pathology]),
        bias=np.zeros(2),
        class_names=(NO_FINDING, PATHOLOGY),
        no_finding=NO_FINDING,
    )

    # sample joint-space points, then pin their planted-direction component so
    # the no-finding lead lands in [margin, 2*margin); the tiny inflation
    # absorbs float round-off in the later logit computation
    z = rng_inst.standard_normal((n_instances, k))
    lead = margin * (1.0 + 1e-9) + rng_inst.uniform(0.0, margin, size=n_instances)
    component = -lead / (2.0 * GAIN)
    z += (component - z @ planted_dir)[:, None] * planted_dir[None, :]
    instances = np.ascontiguousarray(z @ map_a)

    logits = classify(head, instances)
    labels = np.argmax(logits, axis=1)
    if np.any(labels != 0):
        raise DataError("world generation failed to keep instances on the no-finding side")

    return SynthWorld(
        map_a=map_a,
        map_a_pinv=map_a_pinv,
        bank=bank,
        head=head,
        instances=instances,
        labels=labels,
        planted={1: planted_idx},
        margin=float(margin),
        seed=int(seed),
    )


def brute_force_best_concept(
    world: SynthWorld,
    instance_index: int,
    target_class: int,
    bound: float = 1e3,
    tol: float = 1e-6,
    grid: int = 1024,
) -> tuple[int, float]:
    """Single-concept oracle: the concept with the smallest flipping scalar.

    For each concept, scan scalars of both signs up to ``bound`` on a coarse
    grid, bracket the first crossing where the prediction becomes the target
    class, and bisect to ``tol``.  Returns ``(concept index, signed scalar)``
    where the scalar's magnitude is minimal; applying it as a one-hot weight
    vector reproduces the flip.  Works directly on the world's exact linear
    map, independent of the projector machinery under test.
    """
    if not 0 <= target_class < world.head.n_classes:
        raise InvalidTarget(f"target class {target_class} out of range")
    f = world.instances[instance_index]
    if int(world.labels[instance_index]) == target_class:
        raise AlreadyTarget(f"instance {instance_index} already predicts class {target_class}")

    # logits(s, j) = base + s * slope_j, exact because the map is linear
    head_joint = world.head.weights @ world.map_a_pinv
    base = head_joint @ (world.map_a @ f) + world.head.bias
    slopes = head_joint @ world.bank.directions.T  # (K, N_c)

    def predicts_target(j: int, s: float) -> bool:
        return int(np.argmax(base + s * slopes[:, j])) == target_class

    best: tuple[float, int, float] | None = None  # (|s|, concept, signed s)
    grid_points = np.linspace(0.0, bound, grid + 1)
    for j in range(world.bank.size):
        slope = slopes[:, j]
        for sign in (1.0, -1.0):
            # vectorized coarse scan brackets the first cell containing a flip
            vals = base[:, None] + (sign * grid_points)[None, :] * slope[:, None]
            hits = np.argmax(vals, axis=0) == target_class
            if not hits.any():
                continue
            first = int(np.argmax(hits))
            lo, hi = grid_points[first - 1], grid_points[first]
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if predicts_target(j, sign * mid):
                    hi = mid
                else:
                    lo = mid
            magnitude = hi
            if best is None or magnitude < best[0]:
                best = (magnitude, j, sign * magnitude)
    if best is None:
        raise Infeasible(f"no single concept flips instance {instance_index} within |s| <= {bound}")
    return best[1], best[2]


# --- disk format ----------------------------------------------------------

def save_world(world: SynthWorld, directory, precision: str = "f64") -> None:
    """World as a directory of EBF files plus one manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix(
        world.instances,
        Manifest(kind="features", dim=world.dim_clf),
        directory / "features.ebf",
        precision=precision,
    )
    save_bank(world.bank, directory / "bank.ebf", precision=precision)
    save_head(world.head, directory / "head", precision=precision)
    save_matrix(
        world.map_a,
        Manifest(kind="linear_map", dim=world.dim_clf),
        directory / "map.ebf",
        precision=precision,
    )
    save_projector_pair(world.projector_pair(), directory / "projector", precision=precision)
    write_json(
        {
            "kind": "synth_world",
            "seed": world.seed,
            "dim_clf": world.dim_clf,
            "dim_vlm": world.dim_vlm,
            "n_concepts": world.bank.size,
            "n_instances": world.n_instances,
            "margin": world.margin,
            "planted": {str(cls): idx for cls, idx in world.planted.items()},
            "class_names": list(world.head.class_names),
        },
        directory / WORLD_MANIFEST,
    )


def load_world(directory) -> SynthWorld:
    directory = Path(directory)
    mpath = directory / WORLD_MANIFEST
    if not mpath.exists():
        raise ManifestError(f"{directory}: no {WORLD_MANIFEST} found")
    meta = json.loads(mpath.read_text())
    if meta.get("kind") != "synth_world":
        raise ManifestError(f"{mpath}: not a world manifest")
    instances, _ = load_matrix(directory / "features.ebf")
    bank = load_bank(directory / "bank.ebf")
    head = load_head(directory / "head")
    map_a, _ = load_matrix(directory / "map.ebf")
    labels = np.argmax(classify(head, instances), axis=1)
    return SynthWorld(
        map_a=map_a,
        map_a_pinv=np.ascontiguousarray(map_a.T),
        bank=bank,
        head=head,
        instances=instances,
        labels=labels,
        planted={int(cls): int(idx) for cls, idx in meta["planted"].items()},
        margin=float(meta["margin"]),
        seed=int(meta["seed"]),
    )
