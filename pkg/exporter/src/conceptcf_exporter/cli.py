"""Command-line scripts, one per export kind.

Exit codes: 0 success, 1 usage error, 2 checkpoint/data error.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .checkpoints import CheckpointError, TokenizerError
from .heads import export_head
from .images import DEFAULT_IMAGE_SIZE, DEFAULT_MEAN, DEFAULT_STD, ImageError, export_image_embeddings
from .prompts import NEUTRAL_TEMPLATE, STIMULI_TEMPLATE, export_prompt_pairs


def _read_lines(path) -> list[str]:
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]


def _run(command, argv) -> int:
    from conceptcf.errors import EngineError

    try:
        command.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except ValueError as exc:
        click.echo(f"usage error: {exc}", err=True)
        return 1
    except (CheckpointError, TokenizerError, ImageError, EngineError) as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return 2


@click.command()
@click.option("--concepts", "concepts_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Text file, one concept per line.")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--neutral-phrase", default=NEUTRAL_TEMPLATE, show_default=True)
@click.option("--stimuli-template", default=STIMULI_TEMPLATE, show_default=True,
              help="Must contain {concept}.")
@click.option("--l2-normalize", is_flag=True, default=False)
@click.option("--precision", type=click.Choice(["f32", "f64"]), default="f32", show_default=True)
def prompt_pairs(concepts_path, checkpoint, out_path, neutral_phrase, stimuli_template,
                 l2_normalize, precision):
    """Embed neutral/stimuli prompt pairs for every concept."""
    concepts = _read_lines(concepts_path)
    dim = export_prompt_pairs(
        concepts, checkpoint, out_path, neutral_phrase=neutral_phrase,
        stimuli_template=stimuli_template, l2_normalize=l2_normalize,
        precision=precision,
    )
    click.echo(f"wrote {len(concepts)} stimuli rows + 1 neutral row of dim {dim} to {out_path}")


def _image_command(kind, doc):
    @click.command(help=doc)
    @click.option("--images", "images_path", required=True,
                  type=click.Path(exists=True, dir_okay=False),
                  help="Text file, one image path per line.")
    @click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
    @click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
    @click.option("--image-size", default=DEFAULT_IMAGE_SIZE, show_default=True, type=int)
    @click.option("--mean", default=",".join(map(str, DEFAULT_MEAN)), show_default=True)
    @click.option("--std", default=",".join(map(str, DEFAULT_STD)), show_default=True)
    @click.option("--batch-size", default=32, show_default=True, type=int)
    @click.option("--l2-normalize", is_flag=True, default=False)
    @click.option("--precision", type=click.Choice(["f32", "f64"]), default="f32",
                  show_default=True)
    def command(images_path, checkpoint, out_path, image_size, mean, std, batch_size,
                l2_normalize, precision):
        paths = _read_lines(images_path)
        dim = export_image_embeddings(
            paths, checkpoint, out_path, kind=kind, image_size=image_size,
            mean=tuple(float(x) for x in mean.split(",")),
            std=tuple(float(x) for x in std.split(",")),
            batch_size=batch_size, l2_normalize=l2_normalize, precision=precision,
        )
        click.echo(f"wrote {len(paths)} x {dim} {kind} matrix to {out_path}")

    return command


image_features = _image_command(
    "features", "Embed images through a backbone into classifier features."
)
vlm_embeddings = _image_command(
    "vlm_embeddings", "Embed images through a VLM vision encoder into the joint space."
)


@click.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--class-names", "class_names", default=None,
              help="Comma-separated; overrides names stored in the checkpoint.")
@click.option("--no-finding-class", "no_finding", default="No Finding", show_default=True)
@click.option("--precision", type=click.Choice(["f32", "f64"]), default="f32", show_default=True)
def head(checkpoint, out_dir, class_names, no_finding, precision):
    """Extract the final linear layer as an engine-loadable head."""
    names = [n.strip() for n in class_names.split(",")] if class_names else None
    n_classes, dim = export_head(
        checkpoint, out_dir, class_names=names, no_finding=no_finding, precision=precision
    )
    click.echo(f"wrote {n_classes} x {dim} head to {out_dir}")


def prompt_pairs_main(argv=None) -> int:
    return _run(prompt_pairs, argv)


def image_features_main(argv=None) -> int:
    return _run(image_features, argv)


def vlm_embeddings_main(argv=None) -> int:
    return _run(vlm_embeddings, argv)


def head_main(argv=None) -> int:
    return _run(head, argv)


if __name__ == "__main__":
    sys.exit(prompt_pairs_main())
