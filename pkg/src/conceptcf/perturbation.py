"""Concept-weight optimization that flips a frozen classifier's prediction.

Given features ``f`` of one image, the perturbed prediction is::

    logits(w) = head(p_out(p_in(f) + w @ C))

where ``C`` is the concept bank and ``w`` holds one signed weight per
concept.  The optimizer minimizes cross-entropy toward the target class plus
an L1 sparsity term and an L2 deviation term::

    L(w) = CE(logits(w), target) + alpha * ||w||_1 + beta * ||w||_2

via gradient descent with momentum, starting from ``w = 0`` and stopping at
the first step whose prediction equals the target class.  Everything except
``w`` stays frozen.  The final signed weights are the concept importance
scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bank import ConceptBank
from .core import Manifest, as_matrix, as_vector, load_matrix, save_matrix
from .errors import (
    DimensionMismatch,
    DuplicateName,
    InvalidConfig,
    InvalidTarget,
    ManifestError,
    NonFiniteLoss,
    SizeMismatch,
)
from .projector import ProjectorPair, _forward_cached, _input_grad, apply_projector

L2_NORM = "norm"
L2_SQUARED = "squared_norm"

TOWARD_TARGET = "toward_target"
AWAY_FROM_SOURCE = "away_from_source"


@dataclass(frozen=True)
class ClassifierHead:
    """Frozen final linear layer: ``logits = weights @ features + bias``."""

    weights: np.ndarray
    bias: np.ndarray
    class_names: tuple[str, ...]
    no_finding: str = "No Finding"

    def __post_init__(self):
        object.__setattr__(self, "weights", as_matrix(self.weights, "head weights"))
        object.__setattr__(self, "bias", as_vector(self.bias, "head bias"))
        object.__setattr__(self, "class_names", tuple(str(n) for n in self.class_names))
        k = self.weights.shape[0]
        if k < 2:
            raise DimensionMismatch("a classifier head needs at least 2 classes")
        if self.bias.shape[0] != k:
            raise DimensionMismatch(f"bias length {self.bias.shape[0]} != classes {k}")
        if len(self.class_names) != k:
            raise DimensionMismatch(f"{len(self.class_names)} names for {k} classes")
        if len(set(self.class_names)) != k:
            raise DuplicateName("class names must be unique")
        if self.no_finding not in self.class_names:
            raise InvalidTarget(
                f"designated no-finding class {self.no_finding!r} not among {self.class_names}"
            )

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def class_index(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise InvalidTarget(f"unknown class {name!r}; have {self.class_names}") from None


def classify(head: ClassifierHead, features) -> np.ndarray:
    """Raw pre-softmax logits for one feature vector (or a batch of rows)."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim == 1:
        if arr.shape[0] != head.feature_dim:
            raise DimensionMismatch(
                f"feature dim {arr.shape[0]} != head dim {head.feature_dim}"
            )
        return head.weights @ arr + head.bias
    arr = as_matrix(arr, "features")
    if arr.shape[1] != head.feature_dim:
        raise DimensionMismatch(f"feature dim {arr.shape[1]} != head dim {head.feature_dim}")
    return arr @ head.weights.T + head.bias


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    return shifted - np.log(np.sum(np.exp(shifted)))


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - np.max(logits))
    return e / e.sum()


@dataclass(frozen=True)
class PerturbationConfig:
    """Optimization knobs; the defaults are the engine's standard settings."""

    alpha: float = 0.1
    beta: float = 0.1
    learning_rate: float = 1e-2
    momentum: float = 0.9
    max_steps: int = 100
    l2_mode: str = L2_NORM

    def __post_init__(self):
        if self.alpha < 0.0 or self.beta < 0.0:
            raise InvalidConfig("alpha and beta must be nonnegative")
        if self.learning_rate <= 0.0:
            raise InvalidConfig("learning_rate must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise InvalidConfig("momentum must be in [0, 1)")
        if self.max_steps < 1:
            raise InvalidConfig("max_steps must be >= 1")
        if self.l2_mode not in (L2_NORM, L2_SQUARED):
            raise InvalidConfig(f"l2_mode must be {L2_NORM!r} or {L2_SQUARED!r}")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "max_steps": self.max_steps,
            "l2_mode": self.l2_mode,
        }


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    ce: float
    reg_l1: float
    reg_l2: float


def _check_consistent(f_x, w, bank: ConceptBank, pair: ProjectorPair, head: ClassifierHead):
    f_x = as_vector(f_x, "features")
    w = as_vector(w, "concept weights")
    if f_x.shape[0] != pair.clf_dim:
        raise DimensionMismatch(f"feature dim {f_x.shape[0]} != projector input {pair.clf_dim}")
    if bank.dim != pair.vlm_dim:
        raise DimensionMismatch(f"bank dim {bank.dim} != projector joint dim {pair.vlm_dim}")
    if w.shape[0] != bank.size:
        raise DimensionMismatch(f"{w.shape[0]} weights for {bank.size} concepts")
    if head.feature_dim != pair.clf_dim:
        raise DimensionMismatch(
            f"head dim {head.feature_dim} != projector output {pair.clf_dim}"
        )
    return f_x, w


def perturbed_logits(f_x, w, bank: ConceptBank, pair: ProjectorPair, head: ClassifierHead) -> np.ndarray:
    """Logits after shifting the projected embedding by ``w @ C``."""
    f_x, w = _check_consistent(f_x, w, bank, pair, head)
    u = apply_projector(pair.p_in, f_x)
    back = apply_projector(pair.p_out, u + w @ bank.directions)
    return classify(head, back)


def perturbation_loss(logits, target: int, w, cfg: PerturbationConfig) -> LossBreakdown:
    """Cross-entropy toward ``target`` plus the two weight regularizers."""
    logits = as_vector(logits, "logits")
    w = as_vector(w, "concept weights")
    if not 0 <= int(target) < logits.shape[0]:
        raise InvalidTarget(f"target index {target} out of range for {logits.shape[0]} classes")
    ce = float(-log_softmax(logits)[int(target)])
    reg_l1 = float(np.sum(np.abs(w)))
    norm = float(np.linalg.norm(w))
    reg_l2 = norm * norm if cfg.l2_mode == L2_SQUARED else norm
    return LossBreakdown(
        total=ce + cfg.alpha * reg_l1 + cfg.beta * reg_l2,
        ce=ce,
        reg_l1=reg_l1,
        reg_l2=reg_l2,
    )


class _PerturbationProblem:
    """Precomputed pieces shared across optimizer steps for one instance.

    ``p_in(f)`` does not depend on ``w``, so it is evaluated once; each step
    then costs one ``p_out`` forward, one head application, and one backward
    sweep for the weight gradient.
    """

    def __init__(self, f_x, bank, pair, head, target, cfg):
        self.f_x, w0 = _check_consistent(f_x, np.zeros(bank.size), bank, pair, head)
        self.bank = bank
        self.pair = pair
        self.head = head
        if not 0 <= int(target) < head.n_classes:
            raise InvalidTarget(
                f"target index {target} out of range for {head.n_classes} classes"
            )
        self.target = int(target)
        self.cfg = cfg
        self.u = apply_projector(pair.p_in, self.f_x)

    def forward(self, w: np.ndarray):
        shifted = self.u + w @ self.bank.directions
        back, cache = _forward_cached(self.pair.p_out, shifted[None, :])
        logits = classify(self.head, back[0])
        loss = perturbation_loss(logits, self.target, w, self.cfg)
        return logits, loss, cache

    def weight_gradient(self, w: np.ndarray, logits: np.ndarray, cache) -> np.ndarray:
        probs = softmax(logits)
        d_logits = probs.copy()
        d_logits[self.target] -= 1.0
        d_back = self.head.weights.T @ d_logits
        d_shifted = _input_grad(self.pair.p_out, cache, d_back[None, :])[0]
        grad = self.bank.directions @ d_shifted
        grad += self.cfg.alpha * np.sign(w)  # subgradient 0 at w_i == 0
        if self.cfg.l2_mode == L2_SQUARED:
            grad += self.cfg.beta * 2.0 * w
        else:
            norm = float(np.linalg.norm(w))
            if norm > 0.0:  # subgradient 0 at the origin
                grad += self.cfg.beta * (w / norm)
        return grad


def perturbation_gradient(
    f_x, w, bank: ConceptBank, pair: ProjectorPair, head: ClassifierHead,
    target: int, cfg: PerturbationConfig,
) -> np.ndarray:
    """Exact analytic gradient of the final loss with respect to ``w``.

    Bank, projectors and head are frozen.  Subgradient 0 is used for both
    regularizers at their kinks (any ``w_i == 0`` for L1, ``w == 0`` for L2).
    """
    problem = _PerturbationProblem(f_x, bank, pair, head, target, cfg)
    w = as_vector(w, "concept weights")
    if w.shape[0] != bank.size:
        raise DimensionMismatch(f"{w.shape[0]} weights for {bank.size} concepts")
    logits, _, cache = problem.forward(w)
    return problem.weight_gradient(w, logits, cache)


@dataclass(frozen=True)
class ExplanationResult:
    """Outcome of one perturbation optimization."""

    w: np.ndarray
    flipped: bool
    steps_used: int
    initial_logits: np.ndarray
    final_logits: np.ndarray
    target_class: str
    target_index: int
    loss_trace: tuple[float, ...]

    def __post_init__(self):
        if self.flipped and int(np.argmax(self.final_logits)) != self.target_index:
            raise InvalidTarget("flipped result whose final prediction is not the target")


def optimize_perturbation(
    f_x, bank: ConceptBank, pair: ProjectorPair, head: ClassifierHead,
    target: int, cfg: PerturbationConfig | None = None,
) -> ExplanationResult:
    """Learn sparse concept weights that flip the prediction to ``target``.

    Weights start at zero (the unperturbed image) and follow velocity-form
    momentum updates ``v <- mu*v - lr*grad; w <- w + v``.  The run stops at
    the first step whose perturbed prediction equals the target class; the
    prediction is also checked before the first update, so an already-target
    input returns immediately with zero weights.  ``loss_trace`` holds the
    loss after each executed step.
    """
    cfg = cfg or PerturbationConfig()
    problem = _PerturbationProblem(f_x, bank, pair, head, target, cfg)
    w = np.zeros(bank.size)
    velocity = np.zeros(bank.size)

    logits, loss, cache = problem.forward(w)
    initial_logits = logits.copy()
    trace: list[float] = []
    if int(np.argmax(logits)) == problem.target:
        return ExplanationResult(
            w=w, flipped=True, steps_used=0, initial_logits=initial_logits,
            final_logits=logits, target_class=head.class_names[problem.target],
            target_index=problem.target, loss_trace=(),
        )

    flipped = False
    steps = 0
    for step in range(1, cfg.max_steps + 1):
        grad = problem.weight_gradient(w, logits, cache)
        velocity = cfg.momentum * velocity - cfg.learning_rate * grad
        w = w + velocity
        logits, loss, cache = problem.forward(w)
        if not np.isfinite(loss.total) or not np.all(np.isfinite(w)):
            raise NonFiniteLoss(f"perturbation optimization diverged at step {step}")
        trace.append(loss.total)
        steps = step
        if int(np.argmax(logits)) == problem.target:
            flipped = True
            break

    return ExplanationResult(
        w=w, flipped=flipped, steps_used=steps, initial_logits=initial_logits,
        final_logits=logits, target_class=head.class_names[problem.target],
        target_index=problem.target, loss_trace=tuple(trace),
    )


@dataclass(frozen=True)
class RankedConcepts:
    """Concepts ordered by importance; each entry is (name, signed weight)."""

    direction: str
    entries: tuple[tuple[str, float], ...]

    def names(self) -> list[str]:
        return [name for name, _ in self.entries]


def rank_concepts(
    result: ExplanationResult, bank: ConceptBank, k: int,
    direction: str = TOWARD_TARGET,
) -> RankedConcepts:
    """Top concepts by signed weight.

    ``toward_target`` lists the most strongly added concepts first;
    ``away_from_source`` the most strongly subtracted.  Ties break toward the
    lower concept index.
    """
    if result.w.shape[0] != bank.size:
        raise SizeMismatch(f"{result.w.shape[0]} weights for a bank of {bank.size}")
    if k < 1:
        raise InvalidConfig("k must be >= 1")
    if direction == TOWARD_TARGET:
        order = np.argsort(-result.w, kind="stable")
    elif direction == AWAY_FROM_SOURCE:
        order = np.argsort(result.w, kind="stable")
    else:
        raise InvalidConfig(f"direction must be {TOWARD_TARGET!r} or {AWAY_FROM_SOURCE!r}")
    top = order[: min(k, bank.size)]
    return RankedConcepts(
        direction=direction,
        entries=tuple((bank.names[i], float(result.w[i])) for i in top),
    )


def full_ranking(w, names, direction: str = TOWARD_TARGET) -> list[str]:
    """Rank arbitrary weights against a name list (used when re-ranking reports)."""
    w = as_vector(w, "concept weights")
    names = [str(n) for n in names]
    if w.shape[0] != len(names):
        raise SizeMismatch(f"{w.shape[0]} weights for {len(names)} names")
    if direction == TOWARD_TARGET:
        order = np.argsort(-w, kind="stable")
    elif direction == AWAY_FROM_SOURCE:
        order = np.argsort(w, kind="stable")
    else:
        raise InvalidConfig(f"direction must be {TOWARD_TARGET!r} or {AWAY_FROM_SOURCE!r}")
    return [names[i] for i in order]


# --- disk format ----------------------------------------------------------

def save_head(head: ClassifierHead, directory, extra: dict | None = None, precision: str = "f64") -> None:
    """Store a head as a weights matrix plus a bias row, under one directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix(
        head.weights,
        Manifest(
            kind="head",
            dim=head.feature_dim,
            names=list(head.class_names),
            extra={"no_finding": head.no_finding, **(extra or {})},
        ),
        directory / "weights.ebf",
        precision=precision,
    )
    save_matrix(
        head.bias[None, :],
        Manifest(kind="head", dim=head.n_classes),
        directory / "bias.ebf",
        precision=precision,
    )


def load_head(directory) -> ClassifierHead:
    directory = Path(directory)
    weights, manifest = load_matrix(directory / "weights.ebf")
    bias, _ = load_matrix(directory / "bias.ebf")
    if manifest.names is None:
        raise ManifestError(f"{directory}: head manifest needs class names")
    return ClassifierHead(
        weights=weights,
        bias=bias[0],
        class_names=tuple(manifest.names),
        no_finding=str(manifest.extra.get("no_finding", "No Finding")),
    )


def explanation_report(
    result: ExplanationResult, bank: ConceptBank, top_k: int,
    direction: str = TOWARD_TARGET, model_tag: str = "model",
) -> dict:
    """JSON-ready report for one explanation.

    Carries the full weight vector and concept names so downstream scoring
    can re-rank at any cutoff, plus the requested top-k slice.
    """
    top = rank_concepts(result, bank, top_k, direction)
    report = {
        "model_tag": model_tag,
        "target": result.target_class,
        "flipped": bool(result.flipped),
        "already_target": bool(result.flipped and result.steps_used == 0),
        "steps_used": int(result.steps_used),
        "direction": direction,
        "initial_logits": [float(x) for x in result.initial_logits],
        "final_logits": [float(x) for x in result.final_logits],
        "concept_names": list(bank.names),
        "w": [float(x) for x in result.w],
        "top_concepts": [{"name": n, "importance": v} for n, v in top.entries],
        "loss_trace": [float(x) for x in result.loss_trace],
    }
    return report
