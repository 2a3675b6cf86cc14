"""Projection functions between classifier and VLM latent spaces.

``p_in`` carries classifier features (dim ``d``) into the joint embedding
space (dim ``k``); ``p_out`` carries embeddings back.  Both are single
hidden-layer MLPs (two weight matrices) with a ReLU between the layers and a
linear output.  Training minimizes three squared-distance terms:

* forward term:  mean over the batch of ``||p_in(f) - v||^2``
* backward term: mean of ``||p_out(v) - f||^2``
* cycle term:    mean of ``||p_out(p_in(f)) - f||^2``

with the total being their plain sum.  Training pre-fits each projector on
its own term, then fine-tunes both jointly on the total for a fixed number
of epochs.  All gradients are computed analytically in closed form; training
is bit-deterministic for a fixed seed.

Besides MLPs, a projector can be an exact identity (for classifiers that
already live in the joint space, requiring ``d == k``) or an exact linear
map (used by synthetic worlds where the ground-truth map is known).  Those
kinds have no trainable parameters.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .core import Manifest, as_matrix, as_vector, load_matrix, save_matrix, spawn_rngs, write_json
from .errors import (
    DimensionMismatch,
    EmptyBatch,
    EmptyDataset,
    InvalidConfig,
    ManifestError,
    NonFiniteEntry,
    NonFiniteLoss,
)

ACTIVATION = "relu"
MOMENTUM = 0.9

PHASE_INIT = "init"
PHASE_PRETRAIN_IN = "pretrain_in"
PHASE_PRETRAIN_OUT = "pretrain_out"
PHASE_FINETUNE = "finetune"


@dataclass(frozen=True)
class MlpParams:
    """Parameters of one projector MLP: ``y = w2 @ relu(w1 @ x + b1) + b2``.

    ``w1`` is (hidden, in_dim), ``w2`` is (out_dim, hidden).  Treat instances
    as immutable; training code builds fresh ones.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w1", as_matrix(self.w1, "w1"))
        object.__setattr__(self, "b1", as_vector(self.b1, "b1"))
        object.__setattr__(self, "w2", as_matrix(self.w2, "w2"))
        object.__setattr__(self, "b2", as_vector(self.b2, "b2"))
        if self.w2.shape[1] != self.w1.shape[0]:
            raise DimensionMismatch(
                f"w2 columns {self.w2.shape[1]} != w1 rows {self.w1.shape[0]}"
            )
        if self.b1.shape[0] != self.w1.shape[0]:
            raise DimensionMismatch(f"b1 length {self.b1.shape[0]} != hidden {self.w1.shape[0]}")
        if self.b2.shape[0] != self.w2.shape[0]:
            raise DimensionMismatch(f"b2 length {self.b2.shape[0]} != out dim {self.w2.shape[0]}")

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]


@dataclass(frozen=True)
class IdentityMap:
    """Exact identity projector; usable only when both spaces share a dim."""

    dim: int


@dataclass(frozen=True)
class LinearMap:
    """Exact linear projector ``y = weight @ x`` with no bias."""

    weight: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weight", as_matrix(self.weight, "linear map"))


Projector = Union[MlpParams, IdentityMap, LinearMap]


def projector_dims(p: Projector) -> tuple[int, int]:
    """(input dim, output dim) of any projector kind."""
    if isinstance(p, MlpParams):
        return p.in_dim, p.out_dim
    if isinstance(p, IdentityMap):
        return p.dim, p.dim
    if isinstance(p, LinearMap):
        return p.weight.shape[1], p.weight.shape[0]
    raise TypeError(f"not a projector: {type(p).__name__}")


def apply_projector(p: Projector, x: np.ndarray) -> np.ndarray:
    """Apply a projector to a batch (n, in_dim) or a single vector."""
    if x.ndim == 1:
        return apply_projector(p, x[None, :])[0]
    in_dim, _ = projector_dims(p)
    if x.shape[1] != in_dim:
        raise DimensionMismatch(f"input dim {x.shape[1]} != projector input dim {in_dim}")
    if isinstance(p, MlpParams):
        hidden = np.maximum(x @ p.w1.T + p.b1, 0.0)
        return hidden @ p.w2.T + p.b2
    if isinstance(p, IdentityMap):
        return x
    return x @ p.weight.T


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Evaluate one MLP on a single vector."""
    vec = as_vector(x, "mlp input")
    return apply_projector(params, vec)


def _forward_cached(p: Projector, x: np.ndarray):
    """Forward pass keeping what the backward pass needs."""
    if isinstance(p, MlpParams):
        pre = x @ p.w1.T + p.b1
        hidden = np.maximum(pre, 0.0)
        out = hidden @ p.w2.T + p.b2
        return out, (x, pre, hidden)
    return apply_projector(p, x), None


def _input_grad(p: Projector, cache, d_out: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product with respect to the projector input."""
    if isinstance(p, MlpParams):
        _, pre, _ = cache
        d_hidden = (d_out @ p.w2) * (pre > 0.0)
        return d_hidden @ p.w1
    if isinstance(p, IdentityMap):
        return d_out
    return d_out @ p.weight


@dataclass
class MlpGrads:
    """Gradient accumulator matching :class:`MlpParams` fields."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros_like(cls, p: MlpParams) -> "MlpGrads":
        return cls(
            w1=np.zeros_like(p.w1),
            b1=np.zeros_like(p.b1),
            w2=np.zeros_like(p.w2),
            b2=np.zeros_like(p.b2),
        )

    def add_from(self, p: MlpParams, cache, d_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads for an upstream ``d_out``; return d_input."""
        x, pre, hidden = cache
        self.w2 += d_out.T @ hidden
        self.b2 += d_out.sum(axis=0)
        d_hidden = (d_out @ p.w2) * (pre > 0.0)
        self.w1 += d_hidden.T @ x
        self.b1 += d_hidden.sum(axis=0)
        return d_hidden @ p.w1


@dataclass(frozen=True)
class ProjectorPair:
    """The two projectors, validated to be mutually inverse in shape."""

    p_in: Projector
    p_out: Projector

    def __post_init__(self):
        d_in, k_in = projector_dims(self.p_in)
        k_out, d_out = projector_dims(self.p_out)
        if k_in != k_out:
            raise DimensionMismatch(f"p_in output dim {k_in} != p_out input dim {k_out}")
        if d_in != d_out:
            raise DimensionMismatch(f"p_in input dim {d_in} != p_out output dim {d_out}")

    @property
    def clf_dim(self) -> int:
        return projector_dims(self.p_in)[0]

    @property
    def vlm_dim(self) -> int:
        return projector_dims(self.p_in)[1]


def identity_pair(dim: int) -> ProjectorPair:
    """Exact identity projectors for classifiers operating in the joint space."""
    return ProjectorPair(p_in=IdentityMap(int(dim)), p_out=IdentityMap(int(dim)))


def linear_pair(forward_map, backward_map) -> ProjectorPair:
    """Exact linear projectors, e.g. a ground-truth map and its pseudoinverse."""
    return ProjectorPair(p_in=LinearMap(forward_map), p_out=LinearMap(backward_map))


@dataclass(frozen=True)
class PairedEmbeddingDataset:
    """Row-aligned classifier features (n, d) and joint-space embeddings (n, k)."""

    clf_features: np.ndarray
    vlm_embeddings: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "clf_features", as_matrix(self.clf_features, "clf features"))
        object.__setattr__(self, "vlm_embeddings", as_matrix(self.vlm_embeddings, "vlm embeddings"))
        if self.clf_features.shape[0] != self.vlm_embeddings.shape[0]:
            raise DimensionMismatch(
                f"{self.clf_features.shape[0]} feature rows vs "
                f"{self.vlm_embeddings.shape[0]} embedding rows"
            )

    @property
    def n(self) -> int:
        return self.clf_features.shape[0]

    def subset(self, idx) -> "PairedEmbeddingDataset":
        return PairedEmbeddingDataset(
            clf_features=np.ascontiguousarray(self.clf_features[idx]),
            vlm_embeddings=np.ascontiguousarray(self.vlm_embeddings[idx]),
        )


@dataclass(frozen=True)
class ProjectorLosses:
    l_in: float
    l_out: float
    l_cyc: float

    @property
    def total(self) -> float:
        return self.l_in + self.l_out + self.l_cyc

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.l_in, self.l_out, self.l_cyc, self.total)


def _mean_sqnorm(residual: np.ndarray) -> float:
    # mean over batch rows of the squared Euclidean norm per row
    return float(np.sum(residual * residual) / residual.shape[0])


def projector_losses(pair: ProjectorPair, batch: PairedEmbeddingDataset) -> ProjectorLosses:
    """The three loss components on one batch; the total is their exact sum."""
    if batch.n == 0:
        raise EmptyBatch("projector losses need at least one row")
    f, v = batch.clf_features, batch.vlm_embeddings
    if f.shape[1] != pair.clf_dim or v.shape[1] != pair.vlm_dim:
        raise DimensionMismatch(
            f"batch dims ({f.shape[1]}, {v.shape[1]}) != projector dims "
            f"({pair.clf_dim}, {pair.vlm_dim})"
        )
    u = apply_projector(pair.p_in, f)
    back = apply_projector(pair.p_out, v)
    cyc = apply_projector(pair.p_out, u)
    return ProjectorLosses(
        l_in=_mean_sqnorm(u - v),
        l_out=_mean_sqnorm(back - f),
        l_cyc=_mean_sqnorm(cyc - f),
    )


def projector_gradients(
    pair: ProjectorPair, batch: PairedEmbeddingDataset
) -> tuple[MlpGrads, MlpGrads, ProjectorLosses]:
    """Analytic gradients of the total loss for every parameter of both MLPs.

    The cycle term contributes to ``p_in`` through the chained backward pass.
    Only MLP projectors have parameters; other kinds are rejected.
    """
    if not isinstance(pair.p_in, MlpParams) or not isinstance(pair.p_out, MlpParams):
        raise InvalidConfig("projector gradients are defined only for MLP projectors")
    if batch.n == 0:
        raise EmptyBatch("projector gradients need at least one row")
    f, v = batch.clf_features, batch.vlm_embeddings
    if f.shape[1] != pair.clf_dim or v.shape[1] != pair.vlm_dim:
        raise DimensionMismatch(
            f"batch dims ({f.shape[1]}, {v.shape[1]}) != projector dims "
            f"({pair.clf_dim}, {pair.vlm_dim})"
        )
    n = batch.n
    g_in = MlpGrads.zeros_like(pair.p_in)
    g_out = MlpGrads.zeros_like(pair.p_out)

    u, cache_in = _forward_cached(pair.p_in, f)
    back, cache_back = _forward_cached(pair.p_out, v)
    cyc, cache_cyc = _forward_cached(pair.p_out, u)

    losses = ProjectorLosses(
        l_in=_mean_sqnorm(u - v), l_out=_mean_sqnorm(back - f), l_cyc=_mean_sqnorm(cyc - f)
    )

    # forward term -> p_in only
    d_u_in = (2.0 / n) * (u - v)
    g_in.add_from(pair.p_in, cache_in, d_u_in)
    # backward term -> p_out only
    d_back = (2.0 / n) * (back - f)
    g_out.add_from(pair.p_out, cache_back, d_back)
    # cycle term -> p_out, then chained into p_in
    d_cyc = (2.0 / n) * (cyc - f)
    d_u_cyc = g_out.add_from(pair.p_out, cache_cyc, d_cyc)
    g_in.add_from(pair.p_in, cache_in, d_u_cyc)

    return g_in, g_out, losses


@dataclass(frozen=True)
class ProjectorTrainConfig:
    """Knobs for projector training; defaults match the engine's standard run."""

    seed: int
    batch_size: int = 64
    max_epochs: int = 50
    finetune_epochs: int = 5
    learning_rate: float = 1e-3
    early_stop_patience: int = 5
    validation_fraction: float = 0.1
    hidden_units: int = 512

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if not (0.0 < self.validation_fraction < 1.0):
            raise InvalidConfig("validation_fraction must be in (0, 1)")
        if self.max_epochs < 1 or self.finetune_epochs < 0:
            raise InvalidConfig("max_epochs must be >= 1 and finetune_epochs >= 0")
        if self.learning_rate <= 0.0:
            raise InvalidConfig("learning_rate must be positive")
        if self.early_stop_patience < 1:
            raise InvalidConfig("early_stop_patience must be >= 1")
        if self.hidden_units < 1:
            raise InvalidConfig("hidden_units must be >= 1")

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "finetune_epochs": self.finetune_epochs,
            "learning_rate": self.learning_rate,
            "early_stop_patience": self.early_stop_patience,
            "validation_fraction": self.validation_fraction,
            "hidden_units": self.hidden_units,
        }


@dataclass(frozen=True)
class HistoryRecord:
    phase: str
    epoch: int
    split: str
    l_in: float
    l_out: float
    l_cyc: float
    l_total: float


@dataclass
class TrainHistory:
    """Per-epoch losses on both splits, plus the epoch each phase settled on."""

    records: list[HistoryRecord] = field(default_factory=list)
    best_epoch: dict = field(default_factory=dict)

    def rows(self, phase: str | None = None, split: str | None = None):
        return [
            r
            for r in self.records
            if (phase is None or r.phase == phase) and (split is None or r.split == split)
        ]


def save_history(history: TrainHistory, path) -> None:
    """History as delimited text: phase, epoch, split, then the four losses."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase", "epoch", "split", "l_in", "l_out", "l_cyc", "l_total"])
        for r in history.records:
            writer.writerow(
                [r.phase, r.epoch, r.split, repr(r.l_in), repr(r.l_out), repr(r.l_cyc), repr(r.l_total)]
            )


def glorot_init(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    """Uniform symmetric init scaled by fan-in + fan-out; fully seeded."""
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def init_mlp(rng: np.random.Generator, in_dim: int, hidden: int, out_dim: int) -> MlpParams:
    return MlpParams(
        w1=glorot_init(rng, hidden, in_dim),
        b1=np.zeros(hidden),
        w2=glorot_init(rng, out_dim, hidden),
        b2=np.zeros(out_dim),
    )


class _SgdState:
    """Velocity-form momentum: v <- mu*v - lr*grad; param <- param + v."""

    def __init__(self, params: MlpParams, lr: float, momentum: float = MOMENTUM):
        self.arrays = {
            "w1": params.w1.copy(),
            "b1": params.b1.copy(),
            "w2": params.w2.copy(),
            "b2": params.b2.copy(),
        }
        self.velocity = {k: np.zeros_like(a) for k, a in self.arrays.items()}
        self.lr = lr
        self.momentum = momentum

    def params(self) -> MlpParams:
        return MlpParams(**self.arrays)

    def snapshot(self) -> MlpParams:
        return MlpParams(**{k: a.copy() for k, a in self.arrays.items()})

    def step(self, grads: MlpGrads) -> None:
        for key, g in (("w1", grads.w1), ("b1", grads.b1), ("w2", grads.w2), ("b2", grads.b2)):
            v = self.velocity[key]
            v *= self.momentum
            v -= self.lr * g
            self.arrays[key] += v


def _check_finite(losses: ProjectorLosses, history: TrainHistory, where: str) -> None:
    if not np.isfinite(losses.as_tuple()).all():
        raise NonFiniteLoss(f"non-finite loss during {where}", history=history)


def _record_epoch(
    history: TrainHistory,
    phase: str,
    epoch: int,
    pair: ProjectorPair,
    train: PairedEmbeddingDataset,
    val: PairedEmbeddingDataset,
) -> tuple[ProjectorLosses, ProjectorLosses]:
    tr = projector_losses(pair, train)
    va = projector_losses(pair, val)
    history.records.append(HistoryRecord(phase, epoch, "train", *tr.as_tuple()))
    history.records.append(HistoryRecord(phase, epoch, "val", *va.as_tuple()))
    _check_finite(tr, history, f"{phase} epoch {epoch} (train split)")
    _check_finite(va, history, f"{phase} epoch {epoch} (val split)")
    return tr, va


def _single_grads(params: MlpParams, x: np.ndarray, target: np.ndarray) -> MlpGrads:
    """Gradient of mean ||net(x) - target||^2 for one MLP."""
    out, cache = _forward_cached(params, x)
    grads = MlpGrads.zeros_like(params)
    grads.add_from(params, cache, (2.0 / x.shape[0]) * (out - target))
    return grads


def train_projectors(
    data: PairedEmbeddingDataset, cfg: ProjectorTrainConfig
) -> tuple[ProjectorPair, TrainHistory]:
    """Pretrain each projector on its own term, then fine-tune jointly.

    Phase 1 trains ``p_in`` on the forward term and ``p_out`` on the backward
    term, each for at most ``max_epochs`` with early stopping on a held-out
    validation split (patience epochs without improvement; the best-epoch
    parameters are restored).  Phase 2 fine-tunes both on the total loss for
    exactly ``finetune_epochs`` epochs; because the total sums three terms of
    comparable curvature, this phase steps at a third of the learning rate to
    keep the per-term stability margin.  Bit-deterministic for a fixed seed.
    """
    if data.n == 0:
        raise EmptyDataset("no rows to train on")
    n_val = max(1, int(round(cfg.validation_fraction * data.n)))
    if data.n - n_val < 1:
        raise EmptyDataset(
            f"{data.n} rows cannot support a validation fraction of {cfg.validation_fraction}"
        )
    rng_init, rng_split, rng_in, rng_out, rng_ft = spawn_rngs(cfg.seed, 5)
    d = data.clf_features.shape[1]
    k = data.vlm_embeddings.shape[1]

    perm = rng_split.permutation(data.n)
    val = data.subset(perm[:n_val])
    train = data.subset(perm[n_val:])

    state_in = _SgdState(init_mlp(rng_init, d, cfg.hidden_units, k), cfg.learning_rate)
    state_out = _SgdState(init_mlp(rng_init, k, cfg.hidden_units, d), cfg.learning_rate)
    history = TrainHistory()

    def pair_now() -> ProjectorPair:
        # parameter validation doubles as a divergence check
        try:
            return ProjectorPair(p_in=state_in.params(), p_out=state_out.params())
        except NonFiniteEntry:
            raise NonFiniteLoss("parameters became non-finite", history=history) from None

    def pretrain(phase: str, state: _SgdState, rng: np.random.Generator, monitor: str):
        x_all = train.clf_features if phase == PHASE_PRETRAIN_IN else train.vlm_embeddings
        t_all = train.vlm_embeddings if phase == PHASE_PRETRAIN_IN else train.clf_features
        best_val = np.inf
        best_params = state.snapshot()
        best_epoch = 0
        bad = 0
        for epoch in range(1, cfg.max_epochs + 1):
            order = rng.permutation(train.n)
            for start in range(0, train.n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                try:
                    params = state.params()
                except NonFiniteEntry:
                    raise NonFiniteLoss(
                        f"parameters became non-finite during {phase}", history=history
                    ) from None
                state.step(_single_grads(params, x_all[idx], t_all[idx]))
            _, va = _record_epoch(history, phase, epoch, pair_now(), train, val)
            val_metric = va.l_in if monitor == "l_in" else va.l_out
            if val_metric < best_val:
                best_val = val_metric
                best_params = state.snapshot()
                best_epoch = epoch
                bad = 0
            else:
                bad += 1
                if bad >= cfg.early_stop_patience:
                    break
        history.best_epoch[phase] = best_epoch
        state.arrays = {
            "w1": best_params.w1.copy(),
            "b1": best_params.b1.copy(),
            "w2": best_params.w2.copy(),
            "b2": best_params.b2.copy(),
        }
        state.velocity = {key: np.zeros_like(a) for key, a in state.arrays.items()}

    # epoch-0 baseline so histories expose the untrained loss level
    _record_epoch(history, PHASE_INIT, 0, pair_now(), train, val)
    pretrain(PHASE_PRETRAIN_IN, state_in, rng_in, "l_in")
    pretrain(PHASE_PRETRAIN_OUT, state_out, rng_out, "l_out")

    state_in.lr = cfg.learning_rate / 3.0
    state_out.lr = cfg.learning_rate / 3.0
    for epoch in range(1, cfg.finetune_epochs + 1):
        order = rng_ft.permutation(train.n)
        for start in range(0, train.n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            g_in, g_out, _ = projector_gradients(pair_now(), train.subset(idx))
            state_in.step(g_in)
            state_out.step(g_out)
        _record_epoch(history, PHASE_FINETUNE, epoch, pair_now(), train, val)
    if cfg.finetune_epochs:
        history.best_epoch[PHASE_FINETUNE] = cfg.finetune_epochs

    return pair_now(), history


# --- disk format ----------------------------------------------------------

_PAIR_MANIFEST = "projector.manifest.json"


def _projector_meta(p: Projector) -> dict:
    in_dim, out_dim = projector_dims(p)
    if isinstance(p, MlpParams):
        return {"kind": "mlp", "in_dim": in_dim, "out_dim": out_dim, "hidden": p.hidden}
    if isinstance(p, IdentityMap):
        return {"kind": "identity", "in_dim": in_dim, "out_dim": out_dim}
    return {"kind": "linear", "in_dim": in_dim, "out_dim": out_dim}


def _save_component(p: Projector, name: str, directory: Path, precision: str) -> None:
    def put(tag: str, arr: np.ndarray) -> None:
        arr2 = arr if arr.ndim == 2 else arr[None, :]
        save_matrix(
            arr2,
            Manifest(kind="projector_param", dim=arr2.shape[1]),
            directory / f"{name}_{tag}.ebf",
            precision=precision,
        )

    if isinstance(p, MlpParams):
        put("w1", p.w1)
        put("b1", p.b1)
        put("w2", p.w2)
        put("b2", p.b2)
    elif isinstance(p, LinearMap):
        put("map", p.weight)


def _load_component(meta: dict, name: str, directory: Path) -> Projector:
    kind = meta.get("kind")

    def get(tag: str) -> np.ndarray:
        arr, _ = load_matrix(directory / f"{name}_{tag}.ebf")
        return arr

    if kind == "mlp":
        return MlpParams(
            w1=get("w1"), b1=get("b1")[0], w2=get("w2"), b2=get("b2")[0]
        )
    if kind == "identity":
        return IdentityMap(int(meta["in_dim"]))
    if kind == "linear":
        return LinearMap(get("map"))
    raise ManifestError(f"unknown projector kind {kind!r}")


def save_projector_pair(
    pair: ProjectorPair,
    directory,
    train_config: ProjectorTrainConfig | None = None,
    final_losses: ProjectorLosses | None = None,
    extra: dict | None = None,
    precision: str = "f64",
) -> None:
    """Store a pair as EBF parameter files plus one pair-level manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _save_component(pair.p_in, "p_in", directory, precision)
    _save_component(pair.p_out, "p_out", directory, precision)
    manifest = Manifest(
        kind="projector_pair",
        dim=pair.vlm_dim,
        extra={
            "activation": ACTIVATION,
            "clf_dim": pair.clf_dim,
            "vlm_dim": pair.vlm_dim,
            "p_in": _projector_meta(pair.p_in),
            "p_out": _projector_meta(pair.p_out),
            "train_config": train_config.to_dict() if train_config else None,
            "final_losses": dict(
                zip(("l_in", "l_out", "l_cyc", "l_total"), final_losses.as_tuple())
            )
            if final_losses
            else None,
            **(extra or {}),
        },
    )
    write_json(manifest.to_dict(), directory / _PAIR_MANIFEST)


def load_projector_pair(directory) -> ProjectorPair:
    directory = Path(directory)
    mpath = directory / _PAIR_MANIFEST
    if not mpath.exists():
        raise ManifestError(f"{directory}: no {_PAIR_MANIFEST} found")
    manifest = Manifest.from_dict(json.loads(mpath.read_text()))
    try:
        meta_in = manifest.extra["p_in"]
        meta_out = manifest.extra["p_out"]
    except KeyError as exc:
        raise ManifestError(f"{mpath}: missing projector metadata: {exc}") from exc
    return ProjectorPair(
        p_in=_load_component(meta_in, "p_in", directory),
        p_out=_load_component(meta_out, "p_out", directory),
    )
