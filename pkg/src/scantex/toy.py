"""Small synthetic face-like dataset for exercising the full protocol.

Each subject is a fixed set of shape and colour parameters; each capture
adds a small pose jitter, an exposure change and sensor grain.  Morphs are
pixel blends of two captures, one pseudo-tool per blend weight.  Every
digital image also gets a handcrafted print/scan version and a
texture-transferred version.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imgcore import ImageBuffer, load_image, save_image
from .manifest import DatasetManifest, SampleRecord, write_manifest
from .protocol import make_pseudo_morphs
from .texsim import apply_texture, sample_bank, select_best_texture, simulate_print_scan

TOY_TOOLS = {"other(blend50)": 0.5, "other(blend45)": 0.45, "other(blend40)": 0.4, "other(blend35)": 0.35}


@dataclass(frozen=True)
class ToySpec:
    subjects: int = 40
    captures: int = 5
    morphs_per_tool: int = 150
    side: int = 64
    grain: float = 1.5
    seed: int = 7
    blur: float = 0.3


def _subject_params(rng):
    return {
        "skin": rng.uniform(90, 200, size=3),
        "bg": rng.uniform(30, 90, size=3),
        "axes": rng.uniform(0.30, 0.40, size=2),
        "eye_dx": rng.uniform(0.13, 0.19),
        "eye_y": rng.uniform(-0.14, -0.06),
        "mouth_y": rng.uniform(0.14, 0.22),
        "mouth_w": rng.uniform(0.08, 0.16),
        "field": rng.normal(size=(8, 8, 3)),
    }


def toy_face(params, rng, side=64, grain=1.5):
    """Render one capture of a subject as an RGB ImageBuffer."""
    jitter = rng.normal(0.0, 0.015, size=2)
    gain = rng.uniform(0.92, 1.08)
    yy, xx = np.mgrid[0:side, 0:side] / side - 0.5
    xx = xx - jitter[0]
    yy = yy - jitter[1]
    ax, ay = params["axes"]
    face = ((xx / ax) ** 2 + (yy / ay) ** 2) <= 1.0
    shade = ndimage.zoom(params["field"], (side / 8, side / 8, 1), order=3)[:side, :side] * 10.0
    img = np.where(face[:, :, None], params["skin"] + shade, params["bg"] + 0.5 * shade)
    for sx in (-1, 1):
        eye = ((xx - sx * params["eye_dx"]) ** 2 + (yy - params["eye_y"]) ** 2) <= 0.035 ** 2
        img[eye] = (30, 30, 40)
    mouth = (np.abs(yy - params["mouth_y"]) < 0.015) & (np.abs(xx) < params["mouth_w"])
    img[mouth] = (150, 50, 60)
    img = ndimage.gaussian_filter(img, sigma=(0.7, 0.7, 0.0)) * gain
    img = img + rng.normal(0.0, grain, size=img.shape)
    return ImageBuffer(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def generate_toy_dataset(root, spec=ToySpec()):
    """Write the dataset under ``root`` and return its manifest.

    Also writes ``manifest.csv`` and ``toy.json`` (generator settings and the
    texture chosen for the ``ps_texture`` source).
    """
    root = Path(root)
    (root / "digital").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    bona = []
    for s in range(spec.subjects):
        params = _subject_params(rng)
        sid = f"s{s:03d}"
        for c in range(spec.captures):
            rel = f"digital/{sid}_c{c}.png"
            save_image(toy_face(params, rng, spec.side, spec.grain), root / rel)
            bona.append(SampleRecord(rel, sid, "bonafide", "none", "digital"))
    digital = DatasetManifest(tuple(bona))
    morphs = []
    for k, (tool, weight) in enumerate(TOY_TOOLS.items()):
        prefix = tool[6:-1]
        morphs += make_pseudo_morphs(digital, root, "digital", spec.morphs_per_tool, spec.seed * 100 + k,
                                     weight, tool, prefix)
    digital_all = list(bona) + morphs

    (root / "ps_handcrafted").mkdir(exist_ok=True)
    (root / "ps_texture").mkdir(exist_ok=True)
    images = {r.path: load_image(root / r.path) for r in digital_all}
    handcrafted = {}
    for i, r in enumerate(digital_all):
        handcrafted[r.path] = simulate_print_scan(images[r.path], spec.seed * 100000 + i, spec.blur)

    # pick the bank texture whose transfer best matches the handcrafted scans
    bank = sample_bank()
    bona_imgs = [images[r.path] for r in bona]
    reference = [handcrafted[r.path] for r in bona]
    candidates = {tid: [apply_texture(im, bank.get(tid)) for im in bona_imgs] for tid in bank.ids}
    best_id, best_fid = select_best_texture(candidates, reference)
    texture = bank.get(best_id)

    records = list(digital_all)
    for r in digital_all:
        name = Path(r.path).name
        for src, img in (("ps_handcrafted", handcrafted[r.path]), ("ps_texture", apply_texture(images[r.path], texture))):
            rel = f"{src}/{name}"
            save_image(img, root / rel)
            records.append(SampleRecord(rel, r.subject_id, r.label, r.morph_tool, src))
    manifest = DatasetManifest(tuple(records), str(root / "manifest.csv"))
    write_manifest(manifest, root / "manifest.csv")
    info = {"spec": spec.__dict__, "tools": TOY_TOOLS, "texture_id": best_id, "texture_fid": best_fid}
    (root / "toy.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    return manifest
