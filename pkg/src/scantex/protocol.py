"""Leave-one-morph-tool-out experiments with subject-disjoint splits.

A morph counts as belonging to both of its parents, so a morph lands on a
side of the split only when every parent is on that side.
"""

import csv
import hashlib
import io
import json
import logging
import platform
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .errors import (ConsistencyError, DomainError, InsufficientSubjectsError, InsufficientToolsError,
                     MissingSourceError)
from .evalmetrics import ScoreSet, det_curve, det_svg, eer
from .features import extract, method_id, params_fingerprint
from .imgcore import ImageBuffer, load_image, save_image
from .learn import fit_standardizer, load_model, save_model, svm_fit, svm_score, transform
from .manifest import PARENT_SEP, SOURCES, DatasetManifest, SampleRecord, format_manifest

log = logging.getLogger(__name__)

SUMMARY_ROW = "Average by Feature"
SUMMARY_COL = "Average by Morph Method"
CONFIG_KEYS = {"name", "training_sources", "test_sources", "features", "classifier", "split_seed",
               "split_ratio", "manifest", "root", "results"}
LOCATION_KEYS = ("manifest", "root", "results")
CLASSIFIER_KEYS = {"C", "gamma", "tol", "max_passes"}


def _feature_spec(item):
    if isinstance(item, str):
        return {"method": item, "params": {}}
    if isinstance(item, dict) and isinstance(item.get("method"), str):
        params = item.get("params") or {}
        if not isinstance(params, dict):
            raise DomainError(f"feature params must be an object: {item!r}")
        return {"method": item["method"], "params": dict(params)}
    raise DomainError(f"bad feature entry {item!r}")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    name: str
    training_sources: tuple
    features: tuple
    test_sources: tuple = ("ps_handcrafted",)
    classifier: dict = field(default_factory=lambda: {"C": 1.0, "gamma": None, "tol": 1e-3})
    split_seed: int = 0
    split_ratio: float = 0.7
    manifest: str = ""
    root: str = ""
    results: str = "results"

    def __post_init__(self):
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", self.name or ""):
            raise DomainError(f"experiment name {self.name!r} must be a plain file name")
        for attr in ("training_sources", "test_sources"):
            srcs = tuple(sorted(set(getattr(self, attr))))
            if not srcs:
                raise DomainError(f"{attr} must be non-empty")
            bad = [s for s in srcs if s not in SOURCES]
            if bad:
                raise DomainError(f"unknown source(s) {bad}; valid: {', '.join(SOURCES)}")
            object.__setattr__(self, attr, srcs)
        if not 0 < self.split_ratio < 1:
            raise DomainError("split_ratio must lie in (0, 1)")
        feats = tuple(_feature_spec(f) for f in self.features)
        if not feats:
            raise DomainError("at least one feature is required")
        object.__setattr__(self, "features", feats)
        extra = set(self.classifier) - CLASSIFIER_KEYS
        if extra:
            raise DomainError(f"unknown classifier option(s) {sorted(extra)}")
        clf = {"C": 1.0, "gamma": None, "tol": 1e-3}
        clf.update(self.classifier)
        object.__setattr__(self, "classifier", clf)

    def feature_names(self):
        return [method_id(f["method"], **f["params"]) for f in self.features]

    def to_dict(self):
        return {
            "name": self.name,
            "training_sources": list(self.training_sources),
            "test_sources": list(self.test_sources),
            "features": [dict(f) for f in self.features],
            "classifier": dict(self.classifier),
            "split_seed": self.split_seed,
            "split_ratio": self.split_ratio,
            "manifest": self.manifest,
            "root": self.root,
            "results": self.results,
        }

    def protocol_dict(self):
        """The settings that define the experiment, without file locations."""
        d = self.to_dict()
        for key in LOCATION_KEYS:
            del d[key]
        return d

    def digest(self):
        blob = json.dumps(self.protocol_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data):
        extra = set(data) - CONFIG_KEYS
        if extra:
            raise DomainError(f"unknown config key(s) {sorted(extra)}")
        missing = {"name", "training_sources", "features"} - set(data)
        if missing:
            raise DomainError(f"config lacks {sorted(missing)}")
        return cls(**data)


def load_config(path):
    """Read a JSON experiment config; relative paths resolve against its folder."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise DomainError(f"{path}: config must be a JSON object")
    base = path.parent
    for key in LOCATION_KEYS:
        if data.get(key) and not Path(data[key]).is_absolute():
            data[key] = str(base / data[key])
    return ExperimentConfig.from_dict(data)


# experiment presets; the baseline trains on handcrafted print/scan images only
PRESET_SOURCES = {
    "exp1": ("ps_handcrafted",),
    "exp2": ("ps_handcrafted", "ps_synthetic"),
    "exp3": ("ps_handcrafted", "ps_texture"),
}


def preset(name, features, test_sources=("ps_handcrafted",), **kwargs):
    return ExperimentConfig(name, PRESET_SOURCES[name], tuple(features), tuple(test_sources), **kwargs)


@dataclass(frozen=True)
class FoldResult:
    held_out_tool: str
    feature: str
    eer: float
    threshold: float
    scores_csv: str
    n_train_bonafide: int
    n_train_morph: int
    n_test_bonafide: int
    n_test_morph: int

    def __post_init__(self):
        if not 0.0 <= self.eer <= 1.0:
            raise ConsistencyError(f"EER {self.eer} outside [0, 1]")


# --------------------------------------------------------------------------- splits


def split_subjects(subjects, ratio=0.7, seed=0):
    """Shuffle subjects with a seeded PRNG; the first ``round(ratio * n)`` train."""
    subjects = sorted(subjects)
    if len(subjects) < 2:
        raise InsufficientSubjectsError(f"need at least 2 subjects, got {len(subjects)}")
    if not 0 < ratio < 1:
        raise DomainError("ratio must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(subjects))
    n_train = min(max(int(round(ratio * len(subjects))), 1), len(subjects) - 1)
    shuffled = [subjects[i] for i in order]
    return frozenset(shuffled[:n_train]), frozenset(shuffled[n_train:])


def _side(manifest, subjects):
    return manifest.filter(lambda r: r.subjects <= subjects)


def split_subject_disjoint(manifest, ratio=0.7, seed=0):
    """Return ``(train, eval)`` manifests with disjoint subject sets.

    Morphs whose parents straddle the split are dropped from both sides.
    """
    train_s, eval_s = split_subjects(manifest.subjects(), ratio, seed)
    train, held = _side(manifest, train_s), _side(manifest, eval_s)
    assert_disjoint(train, held)
    return train, held


def assert_disjoint(train, test, held_out_tool=None):
    shared = train.subjects() & test.subjects()
    if shared:
        raise ConsistencyError(f"subjects on both sides of the split: {sorted(shared)[:5]}")
    if held_out_tool is not None and held_out_tool in train.morph_tools():
        raise ConsistencyError(f"held-out tool {held_out_tool} appears in training morphs")


def loo_folds(manifest, ratio=0.7, seed=0):
    """One fold per morph tool: ``[(tool, train, test), ...]`` in tool order.

    The subject split is drawn once so every fold tests the same bona fide
    subjects.  Train morphs exclude the held-out tool; test morphs are that
    tool only.
    """
    tools = manifest.morph_tools()
    if len(tools) < 2:
        raise InsufficientToolsError(f"leave-one-out needs at least 2 morph tools, found {tools}")
    train_s, test_s = split_subjects(manifest.subjects(), ratio, seed)
    train_all, test_all = _side(manifest, train_s), _side(manifest, test_s)
    folds = []
    for tool in tools:
        train = train_all.filter(lambda r, t=tool: r.morph_tool != t)
        test = test_all.filter(lambda r, t=tool: not r.is_morph or r.morph_tool == t)
        assert_disjoint(train, test, tool)
        folds.append((tool, train, test))
    return folds


# --------------------------------------------------------------------------- features


class FeatureCache:
    """Memoises decoded images and feature vectors by path and method."""

    def __init__(self, root):
        self.root = Path(root)
        self._images = {}
        self._vectors = {}

    def image(self, rel):
        if rel not in self._images:
            self._images[rel] = load_image(self.root / rel)
        return self._images[rel]

    def vector(self, rel, method, params):
        key = (rel, method, params_fingerprint(method, params))
        if key not in self._vectors:
            self._vectors[key] = extract(method, self.image(rel), **params).values
        return self._vectors[key]

    def matrix(self, records, method, params, threads=1):
        paths = [r.path for r in records]
        if threads > 1:
            todo = sorted({p for p in paths})
            with ThreadPoolExecutor(threads) as pool:
                list(pool.map(lambda p: self.vector(p, method, params), todo))
        return np.stack([self.vector(p, method, params) for p in paths])


def labels_of(records):
    return np.array([1.0 if r.is_morph else -1.0 for r in records])


# --------------------------------------------------------------------------- experiments


def _slug(text):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text).strip("_") or "x"


def _fmt(x):
    return repr(float(x))


def _scores_csv(records, scores):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("path", "subject_id", "label", "morph_tool", "source", "score"))
    for r, s in zip(records, scores):
        w.writerow((r.path, r.subject_id, r.label, r.morph_tool, r.source, _fmt(s)))
    return buf.getvalue()


def summary_table(results, tools, features):
    """Rows per held-out tool plus the feature average; last column averages tools."""
    grid = {(r.held_out_tool, r.feature): r.eer for r in results}
    header = ["held_out_tool", *features, SUMMARY_COL]
    rows = []
    for tool in tools:
        vals = [grid[(tool, f)] for f in features]
        rows.append([tool, *vals, float(np.mean(vals))])
    col_means = [float(np.mean([grid[(t, f)] for t in tools])) for f in features]
    rows.append([SUMMARY_ROW, *col_means, float(np.mean([grid[k] for k in grid]))])
    return header, rows


def format_summary(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([row[0], *(_fmt(v) for v in row[1:])])
    return buf.getvalue()


def read_summary(path):
    """Parse a summary CSV into ``{row label: {column: eer}}``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    return {row[0]: {h: float(v) for h, v in zip(header[1:], row[1:])} for row in rows[1:]}


def _check_sources(config, manifest):
    present = set(manifest.sources())
    for src in sorted(set(config.training_sources) | set(config.test_sources)):
        if src not in present:
            raise MissingSourceError(f"config {config.name!r} needs source {src!r}, absent from the manifest")


def _versions():
    import numpy
    import scipy

    out = {"python": platform.python_version(), "numpy": numpy.__version__, "scipy": scipy.__version__,
           "scantex": __version__, "backend": backend()}
    try:
        import numba

        out["numba"] = numba.__version__
    except ImportError:
        pass
    return out


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def run_experiment(config, manifest, root, out_dir, cache=None, threads=1):
    """Run every fold x feature job and write the report tree.

    Layout under ``out_dir/<name>/``: ``<fold>/<feature>.csv`` (test scores),
    ``<fold>/det.svg``, ``summary.csv`` and ``meta.json``.  When a job fails
    the finished results are still written together with a ``FAILED`` marker.
    """
    _check_sources(config, manifest)
    cache = cache or FeatureCache(root)
    exp_dir = Path(out_dir) / config.name
    folds = loo_folds(manifest, config.split_ratio, config.split_seed)
    names = config.feature_names()
    clf = config.classifier
    results, fold_meta = [], []
    try:
        for tool, train_m, test_m in folds:
            train = [r for r in train_m if r.source in config.training_sources]
            test = [r for r in test_m if r.source in config.test_sources]
            y = labels_of(train)
            fold_dir = exp_dir / _slug(tool)
            curves = []
            fold_meta.append({"held_out_tool": tool, "dir": fold_dir.name,
                              "train_subjects": sorted(train_m.subjects()),
                              "test_subjects": sorted(test_m.subjects()),
                              "n_train": len(train), "n_test": len(test)})
            for spec, name in zip(config.features, names):
                m, p = spec["method"], spec["params"]
                raw = cache.matrix(train, m, p, threads)
                std = fit_standardizer(raw)
                Xtr = transform(std, raw)
                fit = svm_fit(Xtr, y, clf["C"], clf["gamma"], clf["tol"], clf.get("max_passes", 100000))
                scores = svm_score(fit.model, transform(std, cache.matrix(test, m, p, threads)))
                ss = ScoreSet.from_entries((s, r.label, r.morph_tool) for s, r in zip(scores, test))
                curve = det_curve(ss, tool)
                value, thr = eer(curve)
                csv_path = fold_dir / f"{_slug(name)}.csv"
                _write(csv_path, _scores_csv(test, scores))
                curves.append((name, curve))
                results.append(FoldResult(
                    tool, name, value, thr, str(csv_path.relative_to(exp_dir)),
                    int((y < 0).sum()), int((y > 0).sum()),
                    sum(not r.is_morph for r in test), sum(r.is_morph for r in test)))
                log.info("%s / %s / %s: EER %.4f", config.name, tool, name, value)
            _write(fold_dir / "det.svg", det_svg(curves, f"{config.name}: held out {tool}"))
    except Exception as exc:
        _write(exp_dir / "FAILED", f"{type(exc).__name__}: {exc}\n" + "".join(
            f"{r.held_out_tool},{r.feature},{_fmt(r.eer)}\n" for r in results))
        raise
    failed = exp_dir / "FAILED"
    if failed.exists():
        failed.unlink()
    header, rows = summary_table(results, [f[0] for f in folds], names)
    _write(exp_dir / "summary.csv", format_summary(header, rows))
    meta = {
        "config": config.protocol_dict(),
        "config_sha256": config.digest(),
        "manifest_sha256": manifest_digest(manifest),
        "split_seed": config.split_seed,
        "split_ratio": config.split_ratio,
        "versions": _versions(),
        "folds": fold_meta,
        "results": [r.__dict__ for r in results],
    }
    _write(exp_dir / "meta.json", json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return results


def manifest_digest(manifest):
    return hashlib.sha256(format_manifest(manifest).encode()).hexdigest()


# --------------------------------------------------------------------------- train / score


def train_models(config, manifest, root, out_dir, cache=None, threads=1):
    """Fit one model per configured feature on every training-source record."""
    _check_sources(config, manifest)
    cache = cache or FeatureCache(root)
    train = [r for r in manifest if r.source in config.training_sources]
    y = labels_of(train)
    clf = config.classifier
    digest = manifest_digest(manifest)
    paths = []
    for spec, name in zip(config.features, config.feature_names()):
        m, p = spec["method"], spec["params"]
        X = cache.matrix(train, m, p, threads)
        std = fit_standardizer(X)
        fp = {"method": m, "params": p, "feature": name, "manifest_sha256": digest}
        fit = svm_fit(transform(std, X), y, clf["C"], clf["gamma"], clf["tol"], clf.get("max_passes", 100000), fp)
        target = Path(out_dir) / config.name / "models" / _slug(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        paths.append(save_model(fit.model, target, std))
    return paths


def score_manifest(model_path, manifest, root, cache=None):
    """Score every record with a saved model; returns ``(records, scores)``."""
    model, std = load_model(model_path)
    fp = model.fingerprint
    if "method" not in fp:
        raise DomainError(f"{model_path}: model lacks a feature fingerprint")
    cache = cache or FeatureCache(root)
    records = list(manifest)
    X = cache.matrix(records, fp["method"], fp.get("params", {}))
    if std is not None:
        X = transform(std, X)
    return records, svm_score(model, X)


# --------------------------------------------------------------------------- pseudo-morphs


def blend(a, b, weight=0.5):
    """``floor(w * a + (1 - w) * b)`` per pixel; ``w = 0.5`` gives ``floor((a + b) / 2)``."""
    if a.data.shape != b.data.shape:
        raise DomainError(f"cannot blend {a.data.shape} with {b.data.shape}")
    if weight == 0.5:
        out = (a.data.astype(np.int32) + b.data.astype(np.int32)) // 2
    else:
        out = np.floor(weight * a.data.astype(np.float64) + (1.0 - weight) * b.data.astype(np.float64))
    return ImageBuffer(out.astype(np.uint8))


def make_pseudo_morphs(manifest, root, out_dir, n_pairs, seed=0, weight=0.5, tool="other(pseudo)",
                       prefix="morph"):
    """Blend random pairs of bona fide images of different subjects.

    Writes PNGs under ``root/out_dir`` and returns the new records (digital
    source, ``subject_id = "a+b"``).
    """
    bona = [r for r in manifest if not r.is_morph and r.source == "digital"]
    by_subject = {}
    for r in bona:
        by_subject.setdefault(r.subject_id, []).append(r)
    subjects = sorted(by_subject)
    if len(subjects) < 2:
        raise InsufficientSubjectsError("pseudo-morphs need at least 2 subjects")
    if any(PARENT_SEP in s for s in subjects):
        raise ConsistencyError("bona fide subject ids may not contain '+'")
    rng = np.random.default_rng(seed)
    root = Path(root)
    (root / out_dir).mkdir(parents=True, exist_ok=True)
    records = []
    for k in range(n_pairs):
        i, j = rng.choice(len(subjects), size=2, replace=False)
        sa, sb = subjects[min(i, j)], subjects[max(i, j)]
        ra = by_subject[sa][int(rng.integers(len(by_subject[sa])))]
        rb = by_subject[sb][int(rng.integers(len(by_subject[sb])))]
        img = blend(load_image(root / ra.path), load_image(root / rb.path), weight)
        rel = f"{out_dir}/{prefix}_{k:04d}.png"
        save_image(img, root / rel)
        records.append(SampleRecord(rel, f"{sa}{PARENT_SEP}{sb}", "morph", tool, "digital"))
    return records


def with_records(manifest, records):
    return DatasetManifest(tuple(manifest.records) + tuple(records), manifest.origin)
