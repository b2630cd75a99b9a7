"""``scantex`` command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import csv
import json
import logging
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from .errors import (BankError, ConsistencyError, DimensionError, DomainError, EmptyClassError,
                     InsufficientSubjectsError, InsufficientToolsError, KernelError, LayoutError,
                     MissingSourceError, ParseError, ScantexError, SegmentationError,
                     SingleClassError, UncorrectableError)
from .imgcore import load_image, resolve_root, save_image

USAGE_ERRORS = (DomainError, DimensionError, ParseError, LayoutError, SegmentationError, MissingSourceError,
                InsufficientToolsError, InsufficientSubjectsError, KernelError, BankError, ConsistencyError,
                SingleClassError, EmptyClassError)
IMAGE_SUFFIXES = {".png", ".ppm", ".pgm", ".pnm", ".jpg", ".jpeg"}
DEFAULT_SEED = 0


class CliFailure(Exception):
    def __init__(self, message, code=1, details=None):
        super().__init__(message)
        self.code = code
        self.details = details or []


def _default_seed():
    env = os.environ.get("SCANTEX_SEED")
    try:
        return int(env) if env else DEFAULT_SEED
    except ValueError:
        return DEFAULT_SEED


def _ctx():
    return click.get_current_context().obj


def _summary(message):
    click.echo(message)


def _image_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise CliFailure(f"{directory} is not a directory", 2)
    return sorted(p for p in directory.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def _path_seed(seed, rel):
    """Per-file seed independent of processing order."""
    return np.random.SeedSequence([seed, zlib.crc32(str(rel).encode())])


def _map(func, items):
    threads = _ctx()["threads"]
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(func, items))
    return [func(x) for x in items]


def _mirror(in_dir, out_dir, transform):
    """Apply ``transform(image, rel)`` to every image below ``in_dir``."""
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    files = _image_files(in_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def job(path):
        rel = path.relative_to(in_dir)
        target = (out_dir / rel).with_suffix(".png")
        target.parent.mkdir(parents=True, exist_ok=True)
        save_image(transform(load_image(path), rel), target)
        return target

    return _map(job, files)


class ScantexGroup(click.Group):
    """Maps library exceptions to exit codes and optional JSON error records."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except CliFailure as exc:
            self._fail(ctx, type(exc).__name__, str(exc), exc.code, exc.details)
        except USAGE_ERRORS as exc:
            self._fail(ctx, type(exc).__name__, str(exc), 2)
        except (ScantexError, OSError) as exc:
            self._fail(ctx, type(exc).__name__, str(exc), 1)

    @staticmethod
    def _fail(ctx, kind, message, code, details=()):
        obj = ctx.obj or {}
        if obj.get("json_errors"):
            record = {"error": kind, "message": message, "exit_code": code}
            if details:
                record["details"] = list(details)
            click.echo(json.dumps(record, sort_keys=True), err=True)
        else:
            click.echo(f"error: {message}", err=True)
            for line in details:
                click.echo(f"  {line}", err=True)
        ctx.exit(code)


@click.group(cls=ScantexGroup)
@click.version_option(__version__, prog_name="scantex")
@click.option("--seed", type=int, default=_default_seed, show_default="SCANTEX_SEED or 0",
              help="Seed for every random choice.")
@click.option("--threads", type=click.IntRange(min=1), default=lambda: os.cpu_count() or 1,
              show_default="logical cores", help="Worker threads for batch commands.")
@click.option("--root", type=click.Path(file_okay=False), default=None,
              help="Dataset root for manifest paths (default SCANTEX_ROOT or cwd).")
@click.option("--json-errors", is_flag=True, help="Print errors as JSON records on stderr.")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.pass_context
def main(ctx, seed, threads, root, json_errors, verbose):
    """Print/scan texture transfer and morphing attack detection tools."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    ctx.obj = {"seed": seed, "threads": threads, "root": resolve_root(root), "json_errors": json_errors}


# --------------------------------------------------------------------------- palette


@main.group()
def palette():
    """Colour calibration sheets."""


@palette.command("gen")
@click.option("--colors", "n_colors", type=int, default=50, show_default=True, help="Number of patches.")
@click.option("--out", "out", type=click.Path(dir_okay=False), default="sheet.png", show_default=True,
              help="Sheet image; the layout goes to <stem>.layout.json.")
@click.option("--dpi", type=click.Choice(["300", "600"]), default="600", show_default=True,
              help="Target print resolution; 300 halves every dimension.")
@click.option("--cols", type=int, default=5, show_default=True, help="Patches per row.")
def palette_gen(n_colors, out, dpi, cols):
    """Render a calibration sheet and its layout JSON."""
    from .palette import PaletteSpec, default_colors, render_palette_sheet, sheet_layout

    if n_colors < 1:
        raise LayoutError(f"--colors must be at least 1, got {n_colors}")
    k = int(dpi) // 300
    spec = PaletteSpec(tuple(default_colors(n_colors)), patch_w=60 * k, patch_h=80 * k, qr_module_px=2 * k,
                       cols=cols, qr_gap=8 * k, cell_gap=16 * k, margin=20 * k)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(render_palette_sheet(spec), out)
    layout = sheet_layout(spec)
    layout["dpi"] = int(dpi)
    layout_path = out.with_name(out.stem + ".layout.json")
    layout_path.write_text(json.dumps(layout, indent=1) + "\n")
    _summary(f"wrote {out} ({len(spec.colors)} patches, {layout['width']}x{layout['height']} px) and {layout_path}")


# --------------------------------------------------------------------------- textures


@main.group()
def texture():
    """Isolate, apply and select print/scan textures."""


@texture.command("extract")
@click.option("--scan", type=click.Path(exists=True, dir_okay=False), required=True, help="Scanned sheet.")
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output texture bank directory.")
@click.option("--layout", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Layout JSON used when a QR tag is unreadable.")
@click.option("--dpi", type=click.Choice(["300", "600"]), default="600", show_default=True,
              help="Scan resolution recorded with each texture.")
@click.option("--paper", type=click.Choice(["glossy", "bond"]), default="glossy", show_default=True,
              help="Paper kind recorded with each texture.")
@click.option("--zero-mean", is_flag=True, help="Remove the mean colour shift from each residual.")
def texture_extract(scan, out, layout, dpi, paper, zero_mean):
    """Locate patches, decode their tags and write one texture per patch."""
    from .palette import extract_sheet_textures
    from .texsim import TextureBank, save_bank

    layout_data = json.loads(Path(layout).read_text()) if layout else None
    try:
        textures, warnings = extract_sheet_textures(load_image(scan), layout_data, zero_mean=zero_mean,
                                                    dpi=int(dpi), paper=paper)
    except (UncorrectableError, SegmentationError) as exc:
        raise CliFailure("texture extraction failed", 2, str(exc).split("; ")) from exc
    for w in warnings:
        click.echo(f"warning: {w}", err=True)
    save_bank(TextureBank(textures, f"extracted from {Path(scan).name}"), out)
    _summary(f"wrote {len(textures)} textures to {out} ({len(warnings)} warnings)")


@texture.command("apply")
@click.option("--bank", type=click.Path(exists=True, file_okay=False), required=True, help="Texture bank directory.")
@click.option("--id", "tex_id", type=int, required=True, help="Texture id (1-based).")
@click.option("--in", "in_dir", type=click.Path(exists=True, file_okay=False), required=True, help="Input image tree.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Output image tree.")
@click.option("--fit", type=click.Choice(["center_crop", "mirror_tile"]), default="center_crop", show_default=True,
              help="How the texture is fitted to each image.")
def texture_apply(bank, tex_id, in_dir, out_dir, fit):
    """Add one texture to every image of a directory tree."""
    from .texsim import apply_texture, load_bank

    t = load_bank(bank).get(tex_id)
    written = _mirror(in_dir, out_dir, lambda img, rel: apply_texture(img, t, fit))
    _summary(f"textured {len(written)} images with texture {tex_id} into {out_dir}")


@texture.command("select")
@click.option("--bank", type=click.Path(exists=True, file_okay=False), required=True, help="Texture bank directory.")
@click.option("--candidates", type=click.Path(exists=True, file_okay=False), required=True,
              help="Images each texture is applied to.")
@click.option("--reference", type=click.Path(exists=True, file_okay=False), required=True,
              help="Reference print/scan images.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write all FID values as JSON.")
def texture_select(bank, candidates, reference, out):
    """Pick the texture whose transfer gives the lowest FID to the reference set."""
    from .evalmetrics import embed_images, fid_from_vectors
    from .texsim import apply_texture, load_bank

    tb = load_bank(bank)
    base = [load_image(p) for p in _image_files(candidates)]
    ref = embed_images([load_image(p) for p in _image_files(reference)])
    scores = {}
    for tid in tb.ids:
        t = tb.get(tid)
        scores[tid] = fid_from_vectors(embed_images([apply_texture(im, t) for im in base]), ref)
    best = min(scores, key=lambda k: (scores[k], k))
    if out:
        Path(out).write_text(json.dumps({"best_id": best, "fid": {str(k): v for k, v in scores.items()}},
                                        indent=1, sort_keys=True) + "\n")
    _summary(f"best texture {best} FID {scores[best]!r}")


# --------------------------------------------------------------------------- noise


@main.group()
def noise():
    """Gaussian-noise controls."""


@noise.command("add")
@click.option("--sigma", type=float, required=True, help="Noise standard deviation in intensity levels.")
@click.option("--in", "in_dir", type=click.Path(exists=True, file_okay=False), required=True, help="Input image tree.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Output image tree.")
def noise_add(sigma, in_dir, out_dir):
    """Add i.i.d. Gaussian noise; each file's stream derives from --seed and its path."""
    from .texsim import add_gaussian_noise

    if sigma < 0:
        raise DomainError("--sigma must be >= 0")
    seed = _ctx()["seed"]
    written = _mirror(in_dir, out_dir, lambda img, rel: add_gaussian_noise(img, sigma, _path_seed(seed, rel)))
    _summary(f"added sigma={sigma:g} noise to {len(written)} images in {out_dir}")


# --------------------------------------------------------------------------- features


def _parse_params(items):
    params = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise DomainError(f"--param expects key=value, got {item!r}")
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
        if isinstance(params[key], list):
            params[key] = tuple(params[key])
    return params


@main.group()
def features():
    """Feature extraction."""


@features.command("extract")
@click.option("--method", required=True, help="Feature method name.")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True, help="Dataset manifest CSV.")
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory.")
@click.option("--param", "params", multiple=True, help="Extractor parameter key=value (repeatable).")
def features_extract(method, manifest, out, params):
    """Extract one feature for every manifest record into <out>/<method>.sctx."""
    from .container import write_records
    from .features import ALL_METHODS, method_id
    from .manifest import read_manifest
    from .protocol import FeatureCache

    if method not in ALL_METHODS:
        raise DomainError(f"unknown feature method {method!r}; valid: {', '.join(ALL_METHODS)}")
    p = _parse_params(params)
    m = read_manifest(manifest)
    cache = FeatureCache(_ctx()["root"])
    X = cache.matrix(list(m), method, p, _ctx()["threads"])
    name = method_id(method, **p)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{method}.sctx"
    write_records(target, X, method=name, manifest=Path(manifest).name)
    with open(out / f"{method}.index.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("row", "path", "label", "morph_tool", "source"))
        for i, r in enumerate(m):
            w.writerow((i, r.path, r.label, r.morph_tool, r.source))
    _summary(f"wrote {X.shape[0]} x {X.shape[1]} {name} features to {target}")


# --------------------------------------------------------------------------- fid


def _embeddings(path):
    from .evalmetrics import embed_images, load_embeddings

    path = Path(path)
    if path.is_dir():
        files = _image_files(path)
        if not files:
            raise CliFailure(f"no images in {path}", 2)
        return embed_images(_map(load_image, files))
    return load_embeddings(path)


@main.command("fid")
@click.option("--a", "set_a", type=click.Path(exists=True), required=True, help="Image directory or embedding file.")
@click.option("--b", "set_b", type=click.Path(exists=True), required=True, help="Image directory or embedding file.")
@click.option("--embeddings", type=click.Path(dir_okay=False), default=None,
              help="Save the embeddings as <stem>.a.sctx and <stem>.b.sctx.")
def fid_cmd(set_a, set_b, embeddings):
    """Frechet distance between the built-in embeddings of two image sets."""
    from .evalmetrics import fid_from_vectors, save_embeddings

    ea, eb = _embeddings(set_a), _embeddings(set_b)
    if embeddings:
        stem = Path(embeddings)
        save_embeddings(stem.with_name(stem.stem + ".a.sctx"), ea)
        save_embeddings(stem.with_name(stem.stem + ".b.sctx"), eb)
    click.echo(repr(fid_from_vectors(ea, eb)))


# --------------------------------------------------------------------------- experiments


def _load_experiment(config_path):
    from .manifest import read_manifest
    from .protocol import load_config

    cfg = load_config(config_path)
    if not cfg.manifest:
        raise DomainError(f"{config_path}: config needs a 'manifest' entry")
    root = Path(cfg.root) if cfg.root else Path(cfg.manifest).parent
    return cfg, read_manifest(cfg.manifest), root


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Experiment config JSON.")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory (default: the config's results entry).")
def train_cmd(config_path, out):
    """Train one SVM per configured feature on all training-source records."""
    from .protocol import train_models

    cfg, manifest, root = _load_experiment(config_path)
    paths = train_models(cfg, manifest, root, out or cfg.results, threads=_ctx()["threads"])
    for p in paths:
        click.echo(str(p))
    _summary(f"trained {len(paths)} models")


@main.group("eval")
def eval_group():
    """Evaluation protocols."""


@eval_group.command("loo")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Experiment config JSON.")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Results directory (default: the config's results entry).")
def eval_loo(config_path, out):
    """Leave-one-morph-tool-out evaluation with per-fold reports and summary.csv."""
    from .protocol import run_experiment

    cfg, manifest, root = _load_experiment(config_path)
    out = Path(out or cfg.results)
    results = run_experiment(cfg, manifest, root, out, threads=_ctx()["threads"])
    mean = float(np.mean([r.eer for r in results]))
    _summary(f"{cfg.name}: {len(results)} evaluations, mean EER {100 * mean:.2f}%; "
             f"summary in {out / cfg.name / 'summary.csv'}")


@eval_group.command("score")
@click.option("--model", type=click.Path(dir_okay=False), required=True, help="Model path (.svmjson).")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True, help="Manifest to score.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Scores CSV.")
def eval_score(model, manifest, out):
    """Score an external manifest with a trained model."""
    from .manifest import read_manifest
    from .protocol import _scores_csv, score_manifest

    records, scores = score_manifest(model, read_manifest(manifest), _ctx()["root"])
    Path(out).write_text(_scores_csv(records, scores))
    _summary(f"scored {len(records)} samples into {out}")


# --------------------------------------------------------------------------- det


def read_scores_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"label", "score"} <= set(rows[0]):
        raise ParseError(f"{path}: expected columns label, score[, morph_tool]", line=1)
    try:
        return [(float(r["score"]), r["label"], r.get("morph_tool") or ("none" if r["label"] == "bonafide" else "other"))
                for r in rows]
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}", line=None) from exc


@main.group()
def det():
    """DET curves."""


@det.command("plot")
@click.option("--scores", "scores_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Scores CSV with label, morph_tool and score columns.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Output SVG.")
@click.option("--tool", default=None, help="Restrict morphs to one tool.")
@click.option("--csv-out", type=click.Path(dir_okay=False), default=None, help="Also write the curve points as CSV.")
def det_plot(scores_path, out, tool, csv_out):
    """Plot a DET curve and report the EER."""
    from .evalmetrics import ScoreSet, det_curve, det_svg, eer

    ss = ScoreSet.from_entries(read_scores_csv(scores_path))
    curve = det_curve(ss, tool)
    value, thr = eer(curve)
    Path(out).write_text(det_svg([(tool or "all morphs", curve)], Path(scores_path).stem))
    if csv_out:
        Path(csv_out).write_text(curve.to_csv())
    _summary(f"EER {100 * value:.4f}% at threshold {thr!r}; wrote {out}")


# --------------------------------------------------------------------------- toy data


@main.group()
def toy():
    """Bundled synthetic dataset."""


@toy.command("gen")
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Dataset directory.")
@click.option("--subjects", type=int, default=40, show_default=True, help="Number of synthetic subjects.")
@click.option("--features", "feature_list", default="dct2,lbp81,hog", show_default=True,
              help="Comma-separated features for the generated configs.")
def toy_gen(out, subjects, feature_list):
    """Generate the toy dataset plus exp1/exp3 configs testing on textured images."""
    from .protocol import preset
    from .toy import ToySpec, generate_toy_dataset

    if subjects < 4:
        raise DomainError("--subjects must be at least 4")
    out = Path(out)
    spec = ToySpec(subjects=subjects, seed=_ctx()["seed"])
    manifest = generate_toy_dataset(out, spec)
    feats = [f.strip() for f in feature_list.split(",") if f.strip()]
    for name in ("exp1", "exp3"):
        cfg = preset(name, feats, test_sources=("ps_texture",), split_seed=_ctx()["seed"],
                     manifest="manifest.csv", root=".", results="results")
        (out / f"{name}.json").write_text(json.dumps(cfg.to_dict(), indent=1) + "\n")
    _summary(f"wrote {len(manifest)} records to {out / 'manifest.csv'} with configs exp1.json, exp3.json")


def run():
    main(prog_name="scantex")


if __name__ == "__main__":
    sys.exit(run())
