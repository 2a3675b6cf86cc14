"""Command-line entry point wiring the library into reproducible pipelines.

Subcommands: ``bank build``, ``projector train``, ``explain``, ``eval
recall``, ``eval sanity``, ``synth gen``.  Every command is a pure function
of its input files, flags and seed: re-running with the same arguments
reproduces the output files byte for byte.  Wall-clock timings are therefore
never written into regular outputs; pass ``--timings-out`` to capture them
in a separate file that is excluded from that guarantee.

Exit codes: 0 success, 1 usage/config error, 2 data or format error,
3 numeric failure.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click

from . import evaluation as ev
from .bank import build_bank, load_bank, load_prompt_pairs, save_bank
from .core import load_matrix, write_json
from .errors import (
    DataError,
    EngineError,
    InvalidConfig,
    NumericError,
    UnknownConcept,
)
from .perturbation import (
    AWAY_FROM_SOURCE,
    TOWARD_TARGET,
    PerturbationConfig,
    explanation_report,
    full_ranking,
    load_head,
    optimize_perturbation,
)
from .projector import (
    PairedEmbeddingDataset,
    ProjectorTrainConfig,
    identity_pair,
    load_projector_pair,
    projector_losses,
    save_history,
    save_projector_pair,
    train_projectors,
)
from .synth import gen_world, load_world, save_world

PAPER_SCALE = {"d": 512, "k": 512, "n_concepts": 192, "n_instances": 100, "margin": 1.0}


def _read_config_file(path: Path) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _resolve_config(ctx: click.Context, config_path: str | None) -> dict:
    """Merge config-file values under explicitly passed flags.

    Precedence: explicit flag > config file > flag default.  Unknown config
    keys are rejected.  Returns the fully resolved parameter dict.
    """
    params = dict(ctx.params)
    params.pop("config", None)
    if config_path:
        known = set(params)
        file_values = _read_config_file(Path(config_path))
        unknown = sorted(set(file_values) - known)
        if unknown:
            raise InvalidConfig(
                f"{config_path}: unknown config key(s): {', '.join(unknown)}; "
                f"known: {', '.join(sorted(known))}"
            )
        for key, raw in file_values.items():
            source = ctx.get_parameter_source(key)
            if source is not None and source.name != "DEFAULT":
                continue  # explicit flag wins
            default = params[key]
            if isinstance(default, bool):
                params[key] = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int) and not isinstance(default, bool):
                params[key] = int(raw)
            elif isinstance(default, float):
                params[key] = float(raw)
            else:
                params[key] = raw
    return params


def _echo_config(command: str, params: dict) -> None:
    for key in sorted(params):
        click.echo(f"[config] {command}.{key}={params[key]}", err=True)


def _config_strings(params: dict) -> dict:
    return {k: (None if v is None else str(v)) for k, v in sorted(params.items())}


@click.group()
def cli() -> None:
    """Concept-level counterfactual explanations for embedding classifiers."""


# --- bank ------------------------------------------------------------------

@cli.group("bank")
def bank_group() -> None:
    """Concept bank commands."""


@bank_group.command("build")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--precision", type=click.Choice(["f32", "f64"]), default="f64", show_default=True)
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def cmd_bank_build(ctx, pairs_path, out_path, precision, config) -> None:
    """Build a concept bank from embedded prompt pairs."""
    params = _resolve_config(ctx, config)
    _echo_config("bank.build", params)
    pairs = load_prompt_pairs(params["pairs_path"])
    bank = build_bank(pairs)
    save_bank(
        bank,
        params["out_path"],
        extra={"config": _config_strings(params)},
        precision=params["precision"],
    )
    click.echo(f"wrote bank with {bank.size} concepts of dim {bank.dim} to {params['out_path']}")


# --- projector ---------------------------------------------------------------

@cli.group("projector")
def projector_group() -> None:
    """Projector training commands."""


@projector_group.command("train")
@click.option("--features", "features_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--vlm", "vlm_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", required=True, type=int)
@click.option("--batch-size", "batch_size", default=64, show_default=True, type=int)
@click.option("--max-epochs", "max_epochs", default=50, show_default=True, type=int)
@click.option("--finetune-epochs", "finetune_epochs", default=5, show_default=True, type=int)
@click.option("--learning-rate", "learning_rate", default=1e-3, show_default=True, type=float)
@click.option("--patience", "patience", default=5, show_default=True, type=int)
@click.option("--val-fraction", "val_fraction", default=0.1, show_default=True, type=float)
@click.option("--hidden-units", "hidden_units", default=512, show_default=True, type=int)
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def cmd_projector_train(ctx, **_kwargs) -> None:
    """Train the two projectors on a row-aligned paired dataset."""
    params = _resolve_config(ctx, ctx.params.get("config"))
    _echo_config("projector.train", params)
    features, _ = load_matrix(params["features_path"])
    vlm, _ = load_matrix(params["vlm_path"])
    data = PairedEmbeddingDataset(clf_features=features, vlm_embeddings=vlm)
    cfg = ProjectorTrainConfig(
        seed=params["seed"],
        batch_size=params["batch_size"],
        max_epochs=params["max_epochs"],
        finetune_epochs=params["finetune_epochs"],
        learning_rate=params["learning_rate"],
        early_stop_patience=params["patience"],
        validation_fraction=params["val_fraction"],
        hidden_units=params["hidden_units"],
    )
    pair, history = train_projectors(data, cfg)
    final = projector_losses(pair, data)
    out_dir = Path(params["out_dir"])
    save_projector_pair(
        pair, out_dir, train_config=cfg, final_losses=final,
        extra={"config": _config_strings(params)},
    )
    save_history(history, out_dir / "history.csv")
    click.echo(
        f"trained projectors (final l_in={final.l_in:.3e} l_out={final.l_out:.3e} "
        f"l_cyc={final.l_cyc:.3e}); wrote {out_dir}"
    )


# --- explain -----------------------------------------------------------------

@cli.command("explain")
@click.option("--features", "features_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--bank", "bank_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--projector", "projector_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--identity-projectors", is_flag=True, default=False,
              help="Use exact identity projectors (classifier lives in the joint space).")
@click.option("--head", "head_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--target", "target_name", required=True, type=str)
@click.option("--topk", default=5, show_default=True, type=int)
@click.option("--direction", type=click.Choice([TOWARD_TARGET, AWAY_FROM_SOURCE]),
              default=TOWARD_TARGET, show_default=True)
@click.option("--model-tag", "model_tag", default="model", show_default=True, type=str)
@click.option("--alpha", default=0.1, show_default=True, type=float)
@click.option("--beta", default=0.1, show_default=True, type=float)
@click.option("--learning-rate", "learning_rate", default=1e-2, show_default=True, type=float)
@click.option("--momentum", default=0.9, show_default=True, type=float)
@click.option("--max-steps", "max_steps", default=100, show_default=True, type=int)
@click.option("--l2-mode", "l2_mode", type=click.Choice(["norm", "squared_norm"]),
              default="norm", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--timings-out", "timings_out", type=click.Path(dir_okay=False), default=None,
              help="Optional wall-clock log; excluded from the byte-identical guarantee.")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def cmd_explain(ctx, **_kwargs) -> None:
    """Explain every feature row by flipping it to the target class."""
    params = _resolve_config(ctx, ctx.params.get("config"))
    _echo_config("explain", params)
    if (params["projector_dir"] is None) == (not params["identity_projectors"]):
        raise InvalidConfig("pass exactly one of --projector or --identity-projectors")
    features, _ = load_matrix(params["features_path"])
    bank = load_bank(params["bank_path"])
    head = load_head(params["head_dir"])
    if params["identity_projectors"]:
        if head.feature_dim != bank.dim:
            raise InvalidConfig(
                f"identity projectors need head dim == bank dim, "
                f"got {head.feature_dim} != {bank.dim}"
            )
        pair = identity_pair(bank.dim)
    else:
        pair = load_projector_pair(params["projector_dir"])
    target = head.class_index(params["target_name"])
    cfg = PerturbationConfig(
        alpha=params["alpha"],
        beta=params["beta"],
        learning_rate=params["learning_rate"],
        momentum=params["momentum"],
        max_steps=params["max_steps"],
        l2_mode=params["l2_mode"],
    )
    out_dir = Path(params["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    flipped = 0
    timings = []
    for i, row in enumerate(features):
        start = time.perf_counter()
        result = optimize_perturbation(row, bank, pair, head, target, cfg)
        timings.append(time.perf_counter() - start)
        flipped += int(result.flipped)
        report = explanation_report(
            result, bank, top_k=params["topk"], direction=params["direction"],
            model_tag=params["model_tag"],
        )
        write_json(report, out_dir / f"explanation_{i:04d}.json")
    write_json(
        {
            "n_instances": int(features.shape[0]),
            "n_flipped": flipped,
            "coverage": flipped / features.shape[0],
            "config": _config_strings(params),
        },
        out_dir / "summary.json",
    )
    summary = ev.latency_report(timings)
    if params["timings_out"]:
        write_json(
            {"per_instance_s": timings, **summary.to_dict()}, Path(params["timings_out"])
        )
    click.echo(
        f"explained {features.shape[0]} instance(s), coverage "
        f"{flipped / features.shape[0]:.3f}, mean latency {summary.mean_s * 1e3:.1f} ms",
        err=True,
    )
    click.echo(f"wrote {features.shape[0]} report(s) to {out_dir}")


# --- eval --------------------------------------------------------------------

@cli.group("eval")
def eval_group() -> None:
    """Scoring commands."""


@eval_group.command("recall")
@click.option("--reports", "reports_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--ground-truth", "ground_truth_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--k", "k_list", default="5,10", show_default=True,
              help="Comma-separated list of cutoffs.")
@click.option("--direction", type=click.Choice([TOWARD_TARGET, AWAY_FROM_SOURCE]),
              default=TOWARD_TARGET, show_default=True)
@click.option("--allow-missing", "allow_missing", is_flag=True, default=False,
              help="Score ground-truth concepts absent from the bank as never retrieved.")
@click.option("--timings", "timings_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def cmd_eval_recall(ctx, **_kwargs) -> None:
    """Score explanation reports against ground-truth finding lists."""
    params = _resolve_config(ctx, ctx.params.get("config"))
    _echo_config("eval.recall", params)
    try:
        k_values = sorted({int(x) for x in params["k_list"].split(",") if x.strip()})
    except ValueError as exc:
        raise InvalidConfig(f"--k must be comma-separated integers: {exc}") from exc
    if not k_values or min(k_values) < 1:
        raise InvalidConfig("--k needs at least one cutoff >= 1")
    ground_truth = ev.load_ground_truth(params["ground_truth_path"])

    report_files = sorted(Path(params["reports_dir"]).glob("explanation_*.json"))
    if not report_files:
        raise DataError(f"{params['reports_dir']}: no explanation_*.json files found")
    rankings: dict = {}
    totals: dict = {}
    for path in report_files:
        payload = json.loads(path.read_text())
        key = (payload["model_tag"], payload["target"])
        totals.setdefault(key, {"n_total": 0, "n_flipped": 0})
        totals[key]["n_total"] += 1
        rankings.setdefault(key, [])
        if not payload["flipped"]:
            continue
        totals[key]["n_flipped"] += 1
        names = payload["concept_names"]
        gt = ground_truth.get(payload["target"])
        if gt is not None and not params["allow_missing"]:
            missing = [
                n for n in (*gt.primary, *gt.secondary) if n not in set(names)
            ]
            if missing:
                raise UnknownConcept(
                    f"{path.name}: ground-truth concept(s) not in the bank: "
                    f"{', '.join(missing)}; append them to the bank or pass --allow-missing"
                )
        rankings[key].append(full_ranking(payload["w"], names, params["direction"]))

    cells = ev.score_rankings(rankings, ground_truth, k_values)
    cov = {
        key: {"coverage": t["n_flipped"] / t["n_total"], "n_total": t["n_total"]}
        for key, t in totals.items()
    }
    latency = None
    if params["timings_path"]:
        timing_payload = json.loads(Path(params["timings_path"]).read_text())
        latency = ev.latency_report(timing_payload["per_instance_s"])
    report = ev.EvalReport(cells=cells, coverage=cov, latency=latency)
    out_dir = Path(params["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    payload["config"] = _config_strings(params)
    write_json(payload, out_dir / "eval_report.json")
    table = ev.render_recall_table(report, k_values)
    (out_dir / "recall_table.txt").write_text(table)
    click.echo(table, nl=False)


@eval_group.command("sanity")
@click.option("--world", "world_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--n", "n_instances", default=100, show_default=True, type=int)
@click.option("--target", "target_index", default=1, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def cmd_eval_sanity(ctx, **_kwargs) -> None:
    """Top-1 rate of the planted concept on a generated world."""
    params = _resolve_config(ctx, ctx.params.get("config"))
    _echo_config("eval.sanity", params)
    world = load_world(params["world_dir"])
    fraction = ev.top1_sanity_world(world, n=params["n_instances"], target=params["target_index"])
    write_json(
        {
            "top1_fraction": fraction,
            "n": params["n_instances"],
            "target": params["target_index"],
            "planted_concept": world.planted_concept_name(params["target_index"]),
            "config": _config_strings(params),
        },
        params["out_path"],
    )
    click.echo(f"top-1 fraction {fraction:.3f} over {params['n_instances']} instance(s)")


# --- synth -------------------------------------------------------------------

@cli.group("synth")
def synth_group() -> None:
    """Synthetic world commands."""


@synth_group.command("gen")
@click.option("--preset", type=click.Choice(["paper-scale"]), default=None,
              help="Named defaults; explicit flags still override.")
@click.option("--d", "dim_clf", default=32, show_default=True, type=int)
@click.option("--k", "dim_vlm", default=32, show_default=True, type=int)
@click.option("--n-concepts", "n_concepts", default=24, show_default=True, type=int)
@click.option("--n-instances", "n_instances", default=100, show_default=True, type=int)
@click.option("--margin", default=1.0, show_default=True, type=float)
@click.option("--seed", required=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def cmd_synth_gen(ctx, **_kwargs) -> None:
    """Generate a deterministic planted world."""
    params = _resolve_config(ctx, ctx.params.get("config"))
    if params.pop("preset", None) == "paper-scale":
        for flag, key in (("dim_clf", "d"), ("dim_vlm", "k"),
                          ("n_concepts", "n_concepts"), ("n_instances", "n_instances"),
                          ("margin", "margin")):
            source = ctx.get_parameter_source(flag)
            if source is None or source.name == "DEFAULT":
                params[flag] = PAPER_SCALE[key]
    _echo_config("synth.gen", params)
    world = gen_world(
        d=params["dim_clf"],
        k=params["dim_vlm"],
        n_concepts=params["n_concepts"],
        n_instances=params["n_instances"],
        margin=params["margin"],
        seed=params["seed"],
    )
    save_world(world, params["out_dir"])
    click.echo(
        f"wrote world (d={world.dim_clf}, k={world.dim_vlm}, "
        f"{world.bank.size} concepts, {world.n_instances} instances) to {params['out_dir']}"
    )


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:  # --help and friends
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except InvalidConfig as exc:
        click.echo(f"config error: {exc}", err=True)
        return 1
    except NumericError as exc:
        click.echo(f"numeric failure: {type(exc).__name__}: {exc}", err=True)
        return 3
    except EngineError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
