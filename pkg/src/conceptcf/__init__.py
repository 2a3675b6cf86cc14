"""Concept-level counterfactual explanations for embedding-space classifiers.

The pipeline: build a bank of unit-norm concept directions from embedded
prompt pairs, learn MLP projectors between the classifier's latent space and
the joint vision-language space, then optimize sparse per-concept weights
that flip a frozen classifier's prediction.  The signed weights rank the
concepts by importance.
"""

from .bank import (
    ConceptBank,
    PromptPairEmbedding,
    add_concept,
    build_bank,
    concept_direction,
    load_bank,
    load_prompt_pairs,
    remove_concept,
    save_bank,
)
from .core import (
    Manifest,
    l2_normalize,
    load_matrix,
    make_rng,
    save_matrix,
)
from .evaluation import (
    EvalReport,
    GroundTruthFindings,
    LatencySummary,
    coverage,
    latency_report,
    load_ground_truth,
    recall_at_k,
    top1_sanity,
    top1_sanity_world,
)
from .perturbation import (
    ClassifierHead,
    ExplanationResult,
    PerturbationConfig,
    RankedConcepts,
    classify,
    load_head,
    optimize_perturbation,
    perturbation_gradient,
    perturbation_loss,
    perturbed_logits,
    rank_concepts,
    save_head,
)
from .projector import (
    MlpParams,
    PairedEmbeddingDataset,
    ProjectorPair,
    ProjectorTrainConfig,
    identity_pair,
    linear_pair,
    load_projector_pair,
    mlp_forward,
    projector_gradients,
    projector_losses,
    save_projector_pair,
    train_projectors,
)
from .synth import SynthWorld, brute_force_best_concept, gen_world, load_world, save_world

__version__ = "0.1.0"

__all__ = [
    "ClassifierHead",
    "ConceptBank",
    "EvalReport",
    "ExplanationResult",
    "GroundTruthFindings",
    "LatencySummary",
    "Manifest",
    "MlpParams",
    "PairedEmbeddingDataset",
    "PerturbationConfig",
    "ProjectorPair",
    "ProjectorTrainConfig",
    "PromptPairEmbedding",
    "RankedConcepts",
    "SynthWorld",
    "add_concept",
    "brute_force_best_concept",
    "build_bank",
    "classify",
    "concept_direction",
    "coverage",
    "gen_world",
    "identity_pair",
    "l2_normalize",
    "latency_report",
    "linear_pair",
    "load_bank",
    "load_ground_truth",
    "load_head",
    "load_matrix",
    "load_projector_pair",
    "load_prompt_pairs",
    "load_world",
    "make_rng",
    "mlp_forward",
    "optimize_perturbation",
    "perturbation_gradient",
    "perturbation_loss",
    "perturbed_logits",
    "projector_gradients",
    "projector_losses",
    "rank_concepts",
    "recall_at_k",
    "remove_concept",
    "save_bank",
    "save_head",
    "save_matrix",
    "save_projector_pair",
    "save_world",
    "top1_sanity",
    "top1_sanity_world",
    "train_projectors",
]
