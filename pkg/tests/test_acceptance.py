"""Acceptance suite: one test per criterion, each timed and reported as PASS/FAIL.

The report lines are printed as the tests run (visible with ``-s``) and again
in the pytest terminal summary.
"""

import contextlib
import filecmp
import hashlib
import itertools
import json
import time

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import ACCEPTANCE_LINES, constant_image
from qp_oracle import fixtures, solve_dual
from scantex.cli import main
from scantex.evalmetrics import GaussianStats, ScoreSet, bpcer, compute_eer, det_curve, fid, gaussian_stats, macer
from scantex.features import (ALL_METHODS, dct2, dft_log_magnitude, extract, feat_bsif_hist, feat_ulbp_all,
                              feat_ulbp_hist, feat_ulbp_hor, feature_length, singular_values)
from scantex.features.lbp import UNIFORM_LUT
from scantex.imgcore import ImageBuffer
from scantex.learn import rbf_kernel, svm_fit, svm_score
from scantex.manifest import read_manifest
from scantex.palette import (PaletteSpec, default_colors, extract_sheet_textures, isolate_texture,
                             load_texture, render_palette_sheet, save_texture)
from scantex.protocol import SUMMARY_ROW, read_summary
from scantex.qr import BLOCKS, qr_decode, qr_encode, render_symbol
from scantex.rs import rs_correct, rs_encode
from scantex.texsim import apply_texture, radial_power_spectrum, residual_plane, sample_bank, spectral_flatness
from scantex.toy import TOY_TOOLS

ARTIFACTS = {}


@contextlib.contextmanager
def criterion(number, title, limit=None):
    """Time the body, then record and print a PASS/FAIL line."""
    t0 = time.perf_counter()
    status, reason = "FAIL", ""
    try:
        yield
        elapsed = time.perf_counter() - t0
        if limit is not None and elapsed >= limit:
            reason = f" runtime {elapsed:.2f}s exceeds {limit}s"
            raise AssertionError(f"criterion {number}:{reason}")
        status = "PASS"
    except BaseException as exc:
        reason = reason or f" {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        raise
    finally:
        elapsed = time.perf_counter() - t0
        budget = f" (limit {limit}s)" if limit is not None else ""
        line = f"criterion {number} {status}: {title} [{elapsed:.2f}s{budget}]" + (reason if status == "FAIL" else "")
        ACCEPTANCE_LINES.append(line)
        print(line)


def _scores(bona, morph):
    return ScoreSet(list(bona) + list(morph), [False] * len(bona) + [True] * len(morph),
                    tuple(["none"] * len(bona) + ["other"] * len(morph)))


def _digest_dir(directory):
    h = hashlib.sha256()
    for p in sorted(directory.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(directory)).encode() + b"\0" + p.read_bytes())
    return h.hexdigest()


# --------------------------------------------------------------------------- 1 metrics


def test_criterion_1_metric_fixtures():
    with criterion(1, "MACER/BPCER/EER fixtures and DET endpoints", limit=1.0):
        s = _scores([0.0], [0.9, 0.8])
        assert macer(s, threshold=0.5) == 0.0
        s = _scores([0.0], [1.0, 0.0, 0.0, 1.0])
        assert macer(s, threshold=0.5) == 0.5
        s = _scores([0.2, 0.7, 0.4, 0.9], [1.0])
        assert bpcer(s, threshold=0.5) == 0.5
        assert bpcer(s, threshold=-np.inf) == 1.0 and bpcer(s, threshold=np.inf) == 0.0
        assert compute_eer(_scores([0.1, 0.2, 0.3], [0.7, 0.8, 0.9]))[0] == 0.0
        assert compute_eer(_scores([0.1, 0.4, 0.6], [0.5, 0.7, 0.9]))[0] == 1 / 3
        rng = np.random.default_rng(1)
        for _ in range(100):
            nb, nm = rng.integers(1, 40, size=2)
            c = det_curve(_scores(rng.normal(0, 1, nb), rng.normal(rng.uniform(-1, 2), 1, nm)))
            assert (c.macer[0], c.bpcer[0]) == (1.0, 0.0)
            assert (c.macer[-1], c.bpcer[-1]) == (0.0, 1.0)


# --------------------------------------------------------------------------- 2 FID


def _g(mu, cov):
    return GaussianStats(np.atleast_1d(np.asarray(mu, float)), np.atleast_2d(np.asarray(cov, float)), 10)


def test_criterion_2_fid():
    with criterion(2, "FID identity, closed forms, symmetry and mean shift", limit=5.0):
        assert abs(fid(_g(0, 1), _g(3, 1)) - 9.0) <= 1e-9
        assert abs(fid(_g(0, 1), _g(0, 4)) - 1.0) <= 1e-9
        rng = np.random.default_rng(2)
        for dim in range(1, 17):
            a = gaussian_stats(rng.normal(size=(50, dim)) @ rng.normal(size=(dim, dim)))
            b = gaussian_stats(rng.normal(0.5, 2.0, size=(50, dim)))
            assert abs(fid(a, a)) <= 1e-6
            assert abs(fid(a, b) - fid(b, a)) <= 1e-6
            shift = rng.normal(size=dim)
            moved = GaussianStats(a.mean + shift, a.cov, a.n)
            assert abs(fid(a, moved) - float(shift @ shift)) <= 1e-6


# --------------------------------------------------------------------------- 3 SMO


def test_criterion_3_smo_matches_reference_qp():
    with criterion(3, "SMO dual objective and predictions match a reference QP", limit=30.0):
        cases = fixtures(count=12, seed=0)
        assert len(cases) >= 10
        for X, y, C, gamma in cases:
            assert len(y) <= 20
            res = svm_fit(X, y, C=C, gamma=gamma, tol=1e-4)
            K = rbf_kernel(X, X, gamma)
            ref_alpha, ref_obj, ref_b = solve_dual(K, y, C)
            assert abs(res.dual_objective() - ref_obj) <= 1e-4
            ref_scores = K @ (ref_alpha * y) + ref_b
            ours = svm_score(res.model, X)
            assert np.array_equal(np.sign(ours), np.sign(ref_scores))
            a = res.alpha
            assert np.all(a >= 0) and np.all(a <= C) and abs(a @ y) <= 1e-9 * max(1.0, C)
            margin = y * (K @ (a * y) + res.model.bias)
            slack = 2e-4
            assert np.all(margin[a <= 0] >= 1 - slack)
            assert np.all(margin[a >= C] <= 1 + slack)
            free = (a > 0) & (a < C)
            assert np.all(np.abs(margin[free] - 1) <= slack)


# --------------------------------------------------------------------------- 4 extractors

LENGTHS = {"rgb": 4096, "ela": 4096, "srm": 12288, "dct2": 4096, "dft": 4096, "lbp81": 4096, "fusion_lbp": 944,
           "hog": 1080, "svd": 100, "hlbp": 59, "bsif_im": 4096, "bsif_hist": 512, "ulbp_all": 472,
           "ulbp_hor": 472}


def test_criterion_4_extractor_invariants():
    with criterion(4, "extractor invariants on constant and random images", limit=30.0):
        flat = constant_image(117)
        plane = np.full((64, 64), 117 / 255)
        hist = feat_ulbp_hist(flat).values
        assert hist[UNIFORM_LUT[255]] == 1.0 and hist.sum() == 1.0
        bh = feat_bsif_hist(flat).values
        assert bh[0] == 1.0 and bh.sum() == 1.0
        for m in ("hog", "srm", "ela"):
            assert not extract(m, flat).values.any(), m
        dft = dft_log_magnitude(plane)
        assert dft[32, 32] > 0 and np.count_nonzero(np.abs(dft) > 1e-12) == 1
        c = dct2(plane)
        assert c[0, 0] > 0 and np.count_nonzero(np.abs(c) > 1e-12) == 1

        rng = np.random.default_rng(4)
        for shape in ((64, 64), (40, 57), (96, 33)):
            x = rng.random(shape)
            energy = (x ** 2).sum()
            spectrum = np.expm1(np.fft.ifftshift(dft_log_magnitude(x)))
            assert abs((spectrum ** 2).sum() / x.size - energy) <= 1e-6 * energy
            assert abs((dct2(x) ** 2).sum() - energy) <= 1e-6 * energy
            assert abs((singular_values(x) ** 2).sum() - energy) <= 1e-6 * energy
            img = ImageBuffer((rng.random((*shape, 3)) * 255).astype(np.uint8))
            for m in ("hlbp", "bsif_hist"):
                assert abs(extract(m, img).values.sum() - 1.0) <= 1e-9
            for f in (feat_ulbp_all, feat_ulbp_hor):
                for part in np.split(f(img).values, 8):
                    assert abs(part.sum() - 1.0) <= 1e-9
            for m in ALL_METHODS:
                assert len(extract(m, img)) == LENGTHS[m] == feature_length(m), m


# --------------------------------------------------------------------------- 5 QR / RS


def _run_qr(out):
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(5)
    symbols = hashlib.sha256()
    decoded = []
    for i in range(500):
        payload = ",".join(f"{v:03d}" for v in rng.integers(0, 256, 3))
        ec = "LMQ"[i % 3]
        img = render_symbol(qr_encode(payload, ec_level=ec), module_px=int(rng.integers(2, 6)))
        symbols.update(img.data.tobytes())
        got = qr_decode(img)
        assert got == payload, (payload, got)
        decoded.append(got)

    corrected = 0
    for level in "LMQH":
        _, data_len, ec_len = BLOCKS[1][level]
        t = ec_len // 2
        msg = [int(v) for v in rng.integers(0, 256, data_len)]
        code = rs_encode(msg, ec_len)
        n = len(code)
        # every single error: each position with each value
        for pos in range(n):
            for val in range(1, 256):
                bad = list(code)
                bad[pos] ^= val
                assert rs_correct(bad, ec_len) == msg
                corrected += 1
        # every pair of positions, with fixed and random value pairs
        for i, j in itertools.combinations(range(n), 2):
            for v1, v2 in ((1, 1), (0xFF, 0x80), *rng.integers(1, 256, size=(4, 2)).tolist()):
                bad = list(code)
                bad[i] ^= v1
                bad[j] ^= v2
                assert rs_correct(bad, ec_len) == msg
                corrected += 1
        # random patterns of up to t errors
        for _ in range(300):
            bad = list(code)
            for pos in rng.choice(n, size=int(rng.integers(1, t + 1)), replace=False):
                bad[pos] ^= int(rng.integers(1, 256))
            assert rs_correct(bad, ec_len) == msg
            corrected += 1
    (out / "qr.json").write_text(json.dumps({"symbols_sha256": symbols.hexdigest(), "decoded": decoded,
                                             "corrected": corrected}, indent=1) + "\n")
    return corrected


def test_criterion_5_qr_rs(tmp_path):
    with criterion(5, "QR round trips and RS correction within capacity", limit=60.0):
        corrected = _run_qr(tmp_path / "c5")
        assert corrected == 4 * 300 + sum(
            n * 255 + 6 * n * (n - 1) // 2 for n in (sum(BLOCKS[1][lv][1:]) for lv in "LMQH"))
    ARTIFACTS[5] = (_run_qr, tmp_path / "c5")


# --------------------------------------------------------------------------- 6 texture round trip


def _run_textures(out):
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(6)
    worst = 0
    for i in range(24):
        declared = tuple(int(v) for v in rng.integers(40, 216, 3))
        sigma = float(rng.uniform(1.0, 12.0))
        h, w = (int(v) for v in rng.integers(24, 72, 2))
        canvas = np.full((h + 20, w + 20, 3), 255, dtype=np.float64)
        noise = rng.normal(0.0, sigma, (h, w, 3))
        if i % 2:  # correlated grain as well as white noise
            noise = noise + np.repeat(np.repeat(rng.normal(0, sigma, (h // 4 + 1, w // 4 + 1, 3)), 4, 0), 4, 1)[:h, :w]
        canvas[10:10 + h, 10:10 + w] = np.asarray(declared) + noise
        scan = ImageBuffer(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
        t = isolate_texture(scan, (10, 10, w, h), declared)
        path = out / f"tex_{i:03d}.png"
        save_texture(t, path)
        t = load_texture(path)
        flat = ImageBuffer(np.broadcast_to(np.asarray(declared, np.uint8), (t.height, t.width, 3)).copy())
        got = apply_texture(flat, t).data.astype(int)
        inner = (h - t.height) // 2, (w - t.width) // 2
        want = scan.data[10 + inner[0]:10 + inner[0] + t.height, 10 + inner[1]:10 + inner[1] + t.width].astype(int)
        worst = max(worst, int(np.abs(got - want).max()))

    for n, cols in ((1, 1), (12, 4), (50, 5)):
        spec = PaletteSpec(tuple(default_colors(n)), cols=cols)
        textures, warnings = extract_sheet_textures(render_palette_sheet(spec))
        assert len(textures) == n and not warnings
        for k, t in enumerate(textures):
            assert t.declared_color == spec.colors[k]
            assert not np.any(t.residual)
    (out / "worst.json").write_text(json.dumps({"worst_abs_diff": worst}) + "\n")
    return worst


def test_criterion_6_texture_round_trip(tmp_path):
    with criterion(6, "isolate then apply reproduces noisy patches; clean sheets give zero", limit=30.0):
        assert _run_textures(tmp_path / "c6") <= 1
    ARTIFACTS[6] = (_run_textures, tmp_path / "c6")


# --------------------------------------------------------------------------- 7 flatness ordering


def _run_flatness(out):
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for tid, t in enumerate(sample_bank().patches, start=1):
        plane = residual_plane(t)
        tex = spectral_flatness(radial_power_spectrum(plane))
        sigma = float(plane.std())
        for seed in range(10):
            white = np.random.default_rng(seed).normal(0.0, sigma, plane.shape)
            rows.append({"texture": tid, "seed": seed, "texture_flatness": tex,
                         "gaussian_flatness": spectral_flatness(radial_power_spectrum(white))})
    (out / "flatness.json").write_text(json.dumps(rows, indent=1) + "\n")
    return rows


def test_criterion_7_flatness_ordering(tmp_path):
    with criterion(7, "white noise is spectrally flatter than every shipped texture", limit=30.0):
        rows = _run_flatness(tmp_path / "c7")
        assert len(rows) == 8 * 10
        for r in rows:
            assert r["gaussian_flatness"] > r["texture_flatness"], r
    ARTIFACTS[7] = (_run_flatness, tmp_path / "c7")


# --------------------------------------------------------------------------- 8 toy protocol

TOY_FEATURES = ("rgb", "ela", "srm", "dct2", "dft", "lbp81", "fusion_lbp", "hog", "svd", "hlbp", "bsif_im",
                "bsif_hist")


def _cli(*args):
    result = CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def _run_toy(out):
    data = out / "toy"
    _cli("--seed", 7, "--threads", 1, "toy", "gen", "--out", data, "--features", ",".join(TOY_FEATURES))
    for name in ("exp1", "exp3"):
        _cli("--threads", 1, "eval", "loo", "--config", data / f"{name}.json", "--out", out / "results")
    return data, out / "results"


def test_criterion_8_toy_protocol(tmp_path):
    with criterion(8, "toy leave-one-tool-out run: 4 folds, EER < 0.5, Exp3 <= Exp1 for dct2", limit=300.0):
        data, results = _run_toy(tmp_path / "c8")
        manifest = read_manifest(data / "manifest.csv")
        assert len({r.subject_id for r in manifest if not r.is_morph}) >= 40
        assert manifest.morph_tools() == sorted(TOY_TOOLS) and len(set(TOY_TOOLS.values())) == 4
        summaries = {}
        for name in ("exp1", "exp3"):
            cfg = json.loads((data / f"{name}.json").read_text())
            assert cfg["test_sources"] == ["ps_texture"]
            table = read_summary(results / name / "summary.csv")
            assert set(table) == set(TOY_TOOLS) | {SUMMARY_ROW}
            meta = json.loads((results / name / "meta.json").read_text())
            assert len(meta["folds"]) == 4 and len(meta["results"]) == 4 * len(TOY_FEATURES)
            for fold in meta["folds"]:
                assert not set(fold["train_subjects"]) & set(fold["test_subjects"])
            for r in meta["results"]:
                assert 0.0 <= r["eer"] < 0.5, r
            summaries[name] = table
        exp1, exp3 = summaries["exp1"][SUMMARY_ROW]["dct2"], summaries["exp3"][SUMMARY_ROW]["dct2"]
        print(f"dct2 mean EER: exp1 {exp1:.4f}, exp3 {exp3:.4f}")
        assert exp3 <= exp1
    ARTIFACTS[8] = (_run_toy, tmp_path / "c8")


# --------------------------------------------------------------------------- 9 determinism


def test_criterion_9_determinism(tmp_path):
    runners = {5: _run_qr, 6: _run_textures, 7: _run_flatness, 8: _run_toy}
    with criterion(9, "reruns of criteria 5-8 give byte-identical artifacts"):
        for number, runner in runners.items():
            if number in ARTIFACTS:
                first = ARTIFACTS[number][1]
            else:
                first = tmp_path / f"first{number}"
                runner(first)
            second = tmp_path / f"second{number}"
            runner(second)
            files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
            assert files == sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file())
            mismatch = [str(f) for f in files if not filecmp.cmp(first / f, second / f, shallow=False)]
            assert not mismatch, f"criterion {number}: {mismatch[:5]}"
            print(f"criterion {number}: {len(files)} artifacts identical, sha256 {_digest_dir(first)[:16]}")
