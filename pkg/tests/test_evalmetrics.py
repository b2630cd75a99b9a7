import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import sqrtm

from conftest import constant_image, smooth_image
from scantex.errors import DimensionError, EmptyClassError, FormatError, NonFiniteError
from scantex.evalmetrics import (GaussianStats, ScoreSet, bpcer, compute_eer, cycle_loss, det_curve, det_svg,
                                 embed_builtin, fid, fid_from_vectors, gaussian_stats, load_embeddings, macer,
                                 save_embeddings)
from scantex.imgcore import to_grayscale


def _set(bona, morph, tools=None):
    return ScoreSet(list(bona) + list(morph), [False] * len(bona) + [True] * len(morph),
                    tuple(["none"] * len(bona) + list(tools or ["other"] * len(morph))))


# --------------------------------------------------------------------------- MACER / BPCER


def test_macer_examples():
    s = _set([0.0], [0.9, 0.8])
    assert macer(s, threshold=0.5) == 0.0
    s = _set([0.0], [1.0, 0.0, 0.0, 1.0])  # RES pattern 1,0,0,1 at threshold 0.5
    assert macer(s, threshold=0.5) == 0.5
    assert macer(s, threshold=np.inf) == 1.0


def test_macer_per_tool():
    s = _set([0.0], [0.9, 0.1, 0.2], tools=["ubo", "opencv", "opencv"])
    assert macer(s, "ubo", 0.5) == 0.0
    assert macer(s, "opencv", 0.5) == 1.0
    with pytest.raises(EmptyClassError):
        macer(s, "facefusion", 0.5)


def test_bpcer_examples():
    s = _set([0.1, 0.2, 0.3, 0.9], [1.0])
    assert bpcer(s, threshold=0.95) == 0.0
    assert bpcer(s, threshold=0.5) == 0.25
    assert bpcer(s, threshold=-np.inf) == 1.0
    with pytest.raises(EmptyClassError):
        bpcer(_set([], [1.0]), 0.0)


def test_scoreset_rejects_nan():
    with pytest.raises(NonFiniteError):
        ScoreSet([np.nan], [True])


# --------------------------------------------------------------------------- DET / EER


def test_eer_separable():
    value, _ = compute_eer(_set([0.1, 0.2, 0.3], [0.7, 0.8, 0.9]))
    assert value == 0.0


def test_eer_one_third():
    value, thr = compute_eer(_set([0.1, 0.4, 0.6], [0.5, 0.7, 0.9]))
    assert value == pytest.approx(1 / 3, abs=1e-12)
    assert 0.5 < thr <= 0.6


def _eer_oracle(bona, morph):
    """Per-threshold rates by direct counting, then the first sign change."""
    vals = sorted(set(bona) | set(morph))
    ths = [np.inf] + [(a + b) / 2 for a, b in zip(vals[::-1][1:], vals[::-1][:-1])] + [-np.inf]
    ths = [np.inf] + sorted(((a + b) / 2 for a, b in zip(vals[:-1], vals[1:])), reverse=True) + [-np.inf]
    pts = []
    for t in ths:
        m = sum(1 for s in morph if s < t) / len(morph)
        b = sum(1 for s in bona if s >= t) / len(bona)
        pts.append((m, b))
    for m, b in pts:
        if m == b:
            return m
    for (m0, b0), (m1, b1) in zip(pts[:-1], pts[1:]):
        if m0 > b0 and m1 < b1:
            d0, d1 = m0 - b0, m1 - b1
            return m0 + d0 / (d0 - d1) * (m1 - m0)
    raise AssertionError("no crossing")


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(0, 12), min_size=1, max_size=15), st.lists(st.integers(0, 12), min_size=1, max_size=15))
def test_eer_matches_brute_force(bona, morph):
    bona = [b / 4 for b in bona]
    morph = [m / 4 for m in morph]
    s = _set(bona, morph)
    value, _ = compute_eer(s)
    assert value == pytest.approx(_eer_oracle(bona, morph), abs=1e-12)
    curve = det_curve(s)
    # curve points agree with the scalar metrics at every threshold
    for t, m, b in zip(curve.thresholds, curve.macer, curve.bpcer):
        assert m == pytest.approx(macer(s, threshold=t)) and b == pytest.approx(bpcer(s, threshold=t))
    assert np.all(np.diff(curve.macer) <= 0) and np.all(np.diff(curve.bpcer) >= 0)
    assert curve.macer.min() >= 0 and curve.bpcer.max() <= 1


def test_label_swap_symmetry(rng):
    s = _set(rng.normal(0, 1, 20), rng.normal(1, 1, 25))
    c, w = det_curve(s), det_curve(s.swapped())
    # with labels exchanged, "morph" means score < t; compare at the same thresholds
    for t, m, b in zip(c.thresholds, c.macer, c.bpcer):
        sw = s.swapped()
        m_sw = np.mean(sw.morph_scores() < t)
        b_sw = np.mean(sw.bonafide_scores() >= t)
        assert (1 - b_sw, 1 - m_sw) == pytest.approx((m, b))
    assert len(w) == len(c)


def test_det_needs_both_classes():
    with pytest.raises(EmptyClassError):
        det_curve(_set([0.1, 0.2], []))


def test_det_csv_and_svg():
    curve = det_curve(_set([0.1, 0.4, 0.6], [0.5, 0.7, 0.9]))
    lines = curve.to_csv().splitlines()
    assert lines[0] == "threshold,macer,bpcer" and len(lines) == len(curve) + 1
    svg = det_svg([("a <&> b", curve)], title="t")
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 1


# --------------------------------------------------------------------------- Gaussian statistics / FID


def test_stats_examples():
    s = gaussian_stats(np.array([[0.0], [2.0]]), shrink=False)
    assert s.mean.tolist() == [1.0] and s.cov.tolist() == [[2.0]]
    same = gaussian_stats(np.ones((5, 3)), shrink=False)
    assert not same.cov.any()
    with pytest.raises(DimensionError):
        gaussian_stats(np.ones((1, 3)))


def test_stats_shrinkage(rng):
    x = rng.normal(size=(30, 4))
    raw, shrunk = gaussian_stats(x, shrink=False), gaussian_stats(x)
    lam = 1e-6 * np.trace(raw.cov) / 4
    assert np.allclose(shrunk.cov - raw.cov, lam * np.eye(4), atol=1e-15)
    assert np.allclose(raw.cov, np.cov(x, rowvar=False), atol=1e-12)


def _g(mu, var):
    return GaussianStats(np.atleast_1d(np.asarray(mu, float)), np.atleast_2d(np.asarray(var, float)), 10)


def test_fid_closed_forms():
    assert fid(_g(0, 1), _g(3, 1)) == pytest.approx(9.0, abs=1e-12)
    assert fid(_g(0, 1), _g(0, 4)) == pytest.approx(1.0, abs=1e-12)
    a = _g([1, 2], [[2, 0.5], [0.5, 1]])
    assert fid(a, a) <= 1e-6


def _fid_oracle(a, b):
    cross = sqrtm(a.cov @ b.cov).real
    d = a.mean - b.mean
    return float(d @ d + np.trace(a.cov + b.cov - 2 * cross))


@pytest.mark.parametrize("dim", [1, 3, 8, 20])
def test_fid_matches_scipy_sqrtm(rng, dim):
    a = gaussian_stats(rng.normal(size=(60, dim)))
    b = gaussian_stats(rng.normal(0.3, 1.5, size=(60, dim)) @ rng.normal(size=(dim, dim)))
    assert fid(a, b) == pytest.approx(_fid_oracle(a, b), rel=1e-6, abs=1e-8)
    assert fid(a, b) == pytest.approx(fid(b, a), rel=1e-8)


def test_fid_errors():
    with pytest.raises(DimensionError):
        fid(_g([0, 0], np.eye(2)), _g(0, 1))
    with pytest.raises(NonFiniteError):
        fid(_g(0, np.inf), _g(0, 1))


def test_fid_from_identical_sets_is_zero(rng):
    x = rng.random((12, 64))
    assert fid_from_vectors(x, x) == 0.0


# --------------------------------------------------------------------------- embeddings


def test_builtin_embedding(rng):
    assert not embed_builtin(constant_image(0)).any()
    img = smooth_image(rng, 64, 64)
    assert np.array_equal(embed_builtin(img), embed_builtin(img))
    assert len(embed_builtin(img)) == 64
    assert abs(embed_builtin(img).mean() - to_grayscale(img).mean()) < 0.01


def test_embeddings_round_trip(tmp_path):
    vecs = np.array([[0.5, -1.25], [3.0, 4.0], [0.0, 1e-3]], dtype=np.float32)
    save_embeddings(tmp_path / "e.sctx", vecs)
    assert np.array_equal(load_embeddings(tmp_path / "e.sctx"), vecs.astype(np.float64))
    (tmp_path / "bad.sctx").write_bytes(b"SCTX\x02\x00\x00\x00{}")
    with pytest.raises(FormatError):
        load_embeddings(tmp_path / "bad.sctx")


# --------------------------------------------------------------------------- cycle loss


def test_cycle_loss_hand_case():
    x = [np.zeros((2, 2)), np.ones((2, 2))]
    xr = [np.full((2, 2), 0.5), np.ones((2, 2))]  # 0.5 and 0.0 -> mean 0.25
    y = [np.zeros(3)]
    yr = [np.array([1.0, -1.0, 0.0])]  # 2/3
    assert cycle_loss(x, xr, y, yr) == pytest.approx(0.25 + 2 / 3)
    assert cycle_loss(x, x, y, y) == 0.0
    with pytest.raises(DimensionError):
        cycle_loss(x, xr[:1], y, yr)


def test_cycle_loss_examples_and_weighted_mean(rng):
    x = [rng.random((3, 3)) for _ in range(4)]
    y = [rng.random(5) for _ in range(2)]
    assert cycle_loss(x, [a + 1 for a in x], y, y) == pytest.approx(1.0)
    with pytest.raises(DimensionError):
        cycle_loss([], [], y, y)
    xr = [a + rng.normal(size=a.shape) for a in x]
    whole = cycle_loss(x, xr, y, y)
    halves = [cycle_loss(x[:1], xr[:1], y, y), cycle_loss(x[1:], xr[1:], y, y)]
    assert whole == pytest.approx((1 * halves[0] + 3 * halves[1]) / 4)
    assert whole >= 0


@pytest.mark.parametrize("dim", [1, 4, 9])
def test_fid_mean_shift_only(rng, dim):
    cov = np.cov(rng.normal(size=(40, dim)), rowvar=False).reshape(dim, dim)
    shift = rng.normal(size=dim)
    a = GaussianStats(np.zeros(dim), cov, 40)
    b = GaussianStats(shift, cov, 40)
    assert fid(a, b) == pytest.approx(float(shift @ shift), rel=1e-9, abs=1e-9)


def test_det_endpoints_and_eer_gap(rng):
    s = _set(rng.normal(0, 1, 30), rng.normal(1.2, 1, 30))
    c = det_curve(s)
    assert (c.macer[0], c.bpcer[0]) == (1.0, 0.0)
    assert (c.macer[-1], c.bpcer[-1]) == (0.0, 1.0)
    value, thr = compute_eer(s)
    step = 1 / 30
    assert abs(macer(s, threshold=thr) - bpcer(s, threshold=thr)) <= step + 1e-12
    assert abs(value - macer(s, threshold=thr)) <= step + 1e-12


def test_container_header_errors():
    import json
    import struct
    head = json.dumps({"dim": 2, "count": 3}).encode()
    body = np.zeros(4, "<f4").tobytes()
    with pytest.raises(FormatError):
        from scantex.container import unpack_records
        unpack_records(b"SCTX" + struct.pack("<I", len(head)) + head + body)
    head = json.dumps({"dim": 0, "count": 0}).encode()
    with pytest.raises(FormatError):
        unpack_records(b"SCTX" + struct.pack("<I", len(head)) + head)
