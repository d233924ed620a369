import numpy as np
import pytest
import torch
import torch.nn.functional as F

from uwdepth.data import (
    CorpusIndex,
    HazeParams,
    ImageTensor,
    RGBDSample,
    save_color_png,
    save_depth_png,
    synthesize_haze,
)

DEPTH_SCALE = 1e-3
FIXTURE_D_MAX = 5.0
UNDERWATER_AIRLIGHT = np.array([0.05, 0.45, 0.65])


@pytest.fixture(scope="session", autouse=True)
def _single_thread():
    # determinism contracts hold in single-threaded mode
    torch.set_num_threads(1)


def smooth_field(rng, size, scale=8):
    coarse = rng.random((scale, scale))
    t = torch.from_numpy(coarse)[None, None]
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return out[0, 0].numpy()


def make_clean_rgbd(rng, size=72):
    """Synthetic indoor-ish scene: smooth color, rectangles, ramped depth."""
    color = np.stack([smooth_field(rng, size) for _ in range(3)], axis=-1)
    for _ in range(3):
        y0, x0 = rng.integers(0, size - 12, 2)
        hgt, wid = rng.integers(8, 20, 2)
        color[y0 : y0 + hgt, x0 : x0 + wid] = rng.random(3)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    a = rng.random()
    depth = 0.5 + 4.0 * (a * yy + (1 - a) * xx)
    y0, x0 = rng.integers(0, size - 16, 2)
    depth[y0 : y0 + 14, x0 : x0 + 14] *= 0.5 + 0.4 * rng.random()
    return color.astype(np.float32), depth.astype(np.float32)


def make_underwater_image(rng, size=72):
    """Clean scene pushed through a bluish water medium."""
    color, depth = make_clean_rgbd(rng, size)
    t = np.exp(-0.4 * depth)[..., None]
    return (color * t + UNDERWATER_AIRLIGHT * (1 - t)).astype(np.float32)


def write_training_corpora(root, n_per_domain=16, seed=123, size=72):
    """<root>/underwater plus <root>/aerial/{color,depth} with hazy RGB-D."""
    rng = np.random.default_rng(seed)
    (root / "underwater").mkdir(parents=True, exist_ok=True)
    (root / "aerial" / "color").mkdir(parents=True, exist_ok=True)
    (root / "aerial" / "depth").mkdir(parents=True, exist_ok=True)
    for i in range(n_per_domain):
        uw = make_underwater_image(rng, size)
        save_color_png(
            root / "underwater" / f"uw_{i:03d}.png", ImageTensor(uw[None], (0.0, 1.0))
        )
    for i in range(n_per_domain):
        color, depth = make_clean_rgbd(rng, size)
        sample = RGBDSample(
            color=ImageTensor(color[None], (0.0, 1.0)),
            depth=ImageTensor(depth[None, :, :, None], (0.0, float("inf"))),
            depth_valid_mask=np.ones((1, size, size), dtype=bool),
        )
        hazy = synthesize_haze(sample, HazeParams(beta=1.0, airlight=(1.0, 1.0, 1.0)))
        save_color_png(root / "aerial" / "color" / f"rgbd_{i:03d}.png", hazy.color)
        save_depth_png(
            root / "aerial" / "depth" / f"rgbd_{i:03d}.png", depth, depth_scale=DEPTH_SCALE
        )
    return root


def write_clean_corpus(root, n=4, seed=77, size=72):
    """<root>/color + <root>/depth clean RGB-D pairs (synthesize input layout)."""
    rng = np.random.default_rng(seed)
    (root / "color").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    for i in range(n):
        color, depth = make_clean_rgbd(rng, size)
        save_color_png(root / "color" / f"img_{i:03d}.png", ImageTensor(color[None], (0.0, 1.0)))
        save_depth_png(root / "depth" / f"img_{i:03d}.png", depth, depth_scale=DEPTH_SCALE)
    return root


@pytest.fixture(scope="session")
def training_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_training_corpora(root)
    return root


@pytest.fixture(scope="session")
def training_indexes(training_corpus):
    return (
        CorpusIndex.scan_underwater(training_corpus),
        CorpusIndex.scan_aerial(training_corpus),
    )


@pytest.fixture(scope="session")
def clean_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("clean")
    write_clean_corpus(root)
    return root
