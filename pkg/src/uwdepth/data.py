"""Corpus loading, haze synthesis, depth pre-filtering, and patch sampling.

Network-facing tensors live in [-1, 1]. Haze synthesis works on [0, 1] color
and metric depth; depth is normalized into [-1, 1] only when it becomes the
fourth channel of a training batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DataError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass
class ImageTensor:
    """Batched image array, layout [batch, height, width, channels].

    ``range_spec`` declares the value interval the data lives in; values are
    clipped to it after a small float-fuzz tolerance check.
    """

    data: np.ndarray
    range_spec: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ValueError(f"expected 4-D [batch, h, w, c] array, got shape {arr.shape}")
        b, h, w, c = arr.shape
        if h <= 0 or w <= 0 or b <= 0:
            raise ValueError(f"non-positive dimension in shape {arr.shape}")
        if c not in (1, 3, 4):
            raise ValueError(f"channels must be 1, 3 or 4, got {c}")
        lo, hi = self.range_spec
        if not lo < hi:
            raise ValueError(f"invalid range_spec {self.range_spec}")
        if np.isfinite(lo) and arr.min() < lo - 1e-4:
            raise ValueError(f"values below declared range: min {arr.min():.6g} < {lo}")
        if np.isfinite(hi) and arr.max() > hi + 1e-4:
            raise ValueError(f"values above declared range: max {arr.max():.6g} > {hi}")
        self.data = np.clip(arr, lo, hi) if np.isfinite(lo) and np.isfinite(hi) else arr

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    def to_torch(self) -> torch.Tensor:
        """NCHW float32 tensor for the network modules."""
        return torch.from_numpy(np.ascontiguousarray(self.data.transpose(0, 3, 1, 2)))

    @classmethod
    def from_torch(cls, t: torch.Tensor, range_spec=(-1.0, 1.0)) -> "ImageTensor":
        arr = t.detach().cpu().numpy().transpose(0, 2, 3, 1)
        return cls(arr, range_spec)


@dataclass
class RGBDSample:
    """Above-water color + depth pair. Depth is in meters until normalized."""

    color: ImageTensor
    depth: ImageTensor
    depth_valid_mask: np.ndarray  # bool, [batch, height, width]

    def __post_init__(self):
        if self.color.channels != 3:
            raise ValueError(f"color must have 3 channels, got {self.color.channels}")
        if self.depth.channels != 1:
            raise ValueError(f"depth must have 1 channel, got {self.depth.channels}")
        cs, ds = self.color.data.shape, self.depth.data.shape
        if cs[:3] != ds[:3]:
            raise ValueError(f"color {cs} and depth {ds} disagree on batch/height/width")
        mask = np.asarray(self.depth_valid_mask)
        if mask.dtype != np.bool_:
            mask = mask.astype(bool)
        if mask.shape != cs[:3]:
            raise ValueError(f"mask shape {mask.shape} != spatial shape {cs[:3]}")
        self.depth_valid_mask = mask
        d = self.depth.data[..., 0]
        if mask.any() and d[mask].min() < 0:
            raise DataError("negative depth values inside the valid mask")


@dataclass(frozen=True)
class HazeParams:
    """Scattering coefficient and veiling light of the ambient-scattering model.

    beta = 0 is allowed and reproduces the clean (haze-free) ablation arm.
    """

    beta: float = 1.0
    airlight: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if len(self.airlight) != 3 or any(a < 0 or a > 1 for a in self.airlight):
            raise ValueError(f"airlight channels must lie in [0, 1], got {self.airlight}")


@dataclass
class CorpusIndex:
    """Directory index of one training domain."""

    root_path: Path
    entries: list[tuple[Path, Path | None]]
    domain_tag: str  # "underwater" | "aerial_rgbd"

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def scan_underwater(cls, root: str | Path) -> "CorpusIndex":
        """Index ``<root>/underwater/*.png|jpg`` (or ``<root>`` itself)."""
        root = Path(root)
        img_dir = root / "underwater" if (root / "underwater").is_dir() else root
        if not img_dir.is_dir():
            raise DataError(f"underwater corpus directory not found: {img_dir}")
        entries = [(p, None) for p in _list_images(img_dir)]
        return cls(root_path=root, entries=entries, domain_tag="underwater")

    @classmethod
    def scan_aerial(cls, root: str | Path) -> "CorpusIndex":
        """Index ``<root>/aerial/color`` + ``<root>/aerial/depth`` pairs.

        Also accepts a directory that itself contains ``color/`` + ``depth/``.
        """
        root = Path(root)
        base = root / "aerial" if (root / "aerial").is_dir() else root
        color_dir, depth_dir = base / "color", base / "depth"
        if not color_dir.is_dir():
            raise DataError(f"aerial color directory not found: {color_dir}")
        if not depth_dir.is_dir():
            raise DataError(f"aerial depth directory not found: {depth_dir}")
        entries = []
        for cpath in _list_images(color_dir):
            dpath = depth_dir / (cpath.stem + ".png")
            if not dpath.is_file():
                raise DataError(f"missing depth file for {cpath.name}: {dpath}")
            entries.append((cpath, dpath))
        return cls(root_path=root, entries=entries, domain_tag="aerial_rgbd")


def _list_images(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)


def _decode_image(path: str | Path) -> np.ndarray:
    """Decode to a float32 HWC array scaled to [0, 1] (8- or 16-bit aware)."""
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except (OSError, SyntaxError, ValueError) as exc:
        raise DataError(f"cannot decode image file {path}: {exc}") from exc
    if img.mode in ("I;16", "I;16B", "I;16L"):
        arr = np.asarray(img, dtype=np.float32) / 65535.0
    elif img.mode == "I":
        arr = np.asarray(img, dtype=np.float32) / 65535.0
    else:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def _bilinear_resize(arr: np.ndarray, target_size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an HWC float array."""
    h, w = target_size
    t = torch.from_numpy(arr.transpose(2, 0, 1))[None]
    out = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False)
    return out[0].numpy().transpose(1, 2, 0)


def load_image(
    path: str | Path,
    target_size: tuple[int, int] | None = None,
    value_range: tuple[float, float] = (-1.0, 1.0),
) -> ImageTensor:
    """Load a PNG/JPEG, bilinearly resize, and map linearly onto ``value_range``.

    8-bit 0..255 (and 16-bit 0..65535) map to the range endpoints, so with the
    default range an 8-bit value v becomes v/127.5 - 1.
    """
    if target_size is not None:
        th, tw = target_size
        if th <= 0 or tw <= 0:
            raise ValueError(f"target_size must be positive, got {target_size}")
    arr = _decode_image(path)
    if target_size is not None and arr.shape[:2] != tuple(target_size):
        arr = _bilinear_resize(arr, tuple(target_size))
    lo, hi = value_range
    arr = lo + arr * (hi - lo)
    return ImageTensor(arr[None], range_spec=value_range)


def load_depth_png(path: str | Path, depth_scale: float = 1e-3):
    """Load a 16-bit grayscale depth PNG.

    Returns (depth_meters: 1xHxWx1 float32, valid_mask: 1xHxW bool); pixels
    with raw value 0 are treated as undefined.
    """
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except (OSError, SyntaxError, ValueError) as exc:
        raise DataError(f"cannot decode depth file {path}: {exc}") from exc
    raw = np.asarray(img)
    if raw.ndim != 2:
        raise DataError(f"depth file {path} is not single-channel (shape {raw.shape})")
    raw = raw.astype(np.float64)
    meters = (raw * depth_scale).astype(np.float32)[None, :, :, None]
    mask = (raw > 0)[None]
    return ImageTensor(meters, range_spec=(0.0, math.inf)), mask


def save_color_png(path: str | Path, image: ImageTensor, index: int = 0) -> None:
    """Write one batch entry as an 8-bit PNG, mapping range_spec to 0..255."""
    lo, hi = image.range_spec
    arr = (image.data[index] - lo) / (hi - lo)
    raw = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    if raw.shape[2] == 1:
        raw = raw[:, :, 0]
    Image.fromarray(raw).save(path)


def save_depth_png(path: str | Path, depth_meters: np.ndarray, depth_scale: float = 1e-3) -> None:
    """Write a 2-D meters array as a 16-bit PNG using the corpus scale."""
    raw = np.clip(np.round(depth_meters / depth_scale), 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(path)


def fill_invalid_depth(depth: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace invalid depth pixels with their nearest valid neighbor.

    depth: [b, h, w, 1], mask: [b, h, w] bool. The model needs dense depth;
    metrics re-apply the mask later.
    """
    out = depth.copy()
    for b in range(depth.shape[0]):
        m = mask[b]
        if m.all():
            continue
        if not m.any():
            raise DataError(f"batch entry {b} has no valid depth pixel to fill from")
        idx = ndimage.distance_transform_edt(~m, return_distances=False, return_indices=True)
        out[b, :, :, 0] = depth[b, :, :, 0][tuple(idx)]
    return out


def bilateral_filter_depth(
    depth: ImageTensor, sigma_spatial: float, sigma_range: float
) -> ImageTensor:
    """Edge-preserving smoothing of a 1-channel depth tensor.

    Gaussian spatial weights truncated at radius ceil(2*sigma_spatial); range
    weights exp(-(dI)^2 / (2 sigma_range^2)); windows are clipped at borders
    and weights renormalized over included pixels.
    """
    if sigma_spatial <= 0 or sigma_range <= 0:
        raise ValueError(
            f"sigmas must be positive, got spatial={sigma_spatial}, range={sigma_range}"
        )
    if depth.channels != 1:
        raise ValueError(f"bilateral filter expects 1 channel, got {depth.channels}")
    radius = int(math.ceil(2.0 * sigma_spatial))
    d = depth.data[..., 0].astype(np.float64)
    b, h, w = d.shape
    num = np.zeros_like(d)
    den = np.zeros_like(d)
    inv2ss = 1.0 / (2.0 * sigma_spatial * sigma_spatial)
    inv2sr = 1.0 / (2.0 * sigma_range * sigma_range)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            sw = math.exp(-(dy * dy + dx * dx) * inv2ss)
            dst = (slice(None), slice(max(0, -dy), h - max(0, dy)), slice(max(0, -dx), w - max(0, dx)))
            src = (slice(None), slice(max(0, dy), h + min(0, dy)), slice(max(0, dx), w + min(0, dx)))
            shifted = d[src]
            wgt = sw * np.exp(-((shifted - d[dst]) ** 2) * inv2sr)
            num[dst] += wgt * shifted
            den[dst] += wgt
    out = (num / den).astype(np.float32)[..., None]
    return ImageTensor(out, range_spec=depth.range_spec)


def synthesize_haze(sample: RGBDSample, params: HazeParams) -> RGBDSample:
    """Apply the ambient-scattering model J*t + A*(1-t), t = exp(-beta*d).

    Color must be in [0, 1] working range and depth in meters. Invalid depth
    pixels are filled from their nearest valid neighbor before computing
    transmission; the returned sample keeps the original depth and mask.
    """
    lo, hi = sample.color.range_spec
    if not (abs(lo) < 1e-6 and abs(hi - 1.0) < 1e-6):
        raise ValueError(f"haze synthesis expects color in [0, 1], got range {sample.color.range_spec}")
    depth = sample.depth.data
    mask = sample.depth_valid_mask
    if mask.any() and depth[..., 0][mask].min() < 0:
        raise DataError("negative depth inside the valid mask")
    dense = fill_invalid_depth(depth, mask) if not mask.all() else depth
    t = np.exp(-params.beta * dense.astype(np.float64))
    t = np.maximum(t, np.finfo(np.float64).tiny)  # keep 0 < t <= 1 even at extreme depth
    airlight = np.asarray(params.airlight, dtype=np.float64).reshape(1, 1, 1, 3)
    hazy = sample.color.data.astype(np.float64) * t + airlight * (1.0 - t)
    return RGBDSample(
        color=ImageTensor(hazy.astype(np.float32), range_spec=(0.0, 1.0)),
        depth=sample.depth,
        depth_valid_mask=sample.depth_valid_mask,
    )


def sample_patch(sample, size: int, rng: np.random.Generator):
    """Crop a random size x size patch; color/depth/mask share offsets."""
    if isinstance(sample, RGBDSample):
        h, w = sample.color.height, sample.color.width
    else:
        h, w = sample.height, sample.width
    if size > h or size > w:
        raise ValueError(f"patch size {size} exceeds image dims {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    if isinstance(sample, RGBDSample):
        return RGBDSample(
            color=ImageTensor(
                sample.color.data[:, top : top + size, left : left + size], sample.color.range_spec
            ),
            depth=ImageTensor(
                sample.depth.data[:, top : top + size, left : left + size], sample.depth.range_spec
            ),
            depth_valid_mask=sample.depth_valid_mask[:, top : top + size, left : left + size],
        )
    return ImageTensor(sample.data[:, top : top + size, left : left + size], sample.range_spec)


def normalize_depth(depth_meters: np.ndarray, d_max: float) -> np.ndarray:
    """Affine map of metric depth into [-1, 1]: 2*(d/d_max) - 1, clipped."""
    return np.clip(2.0 * (depth_meters / d_max) - 1.0, -1.0, 1.0).astype(np.float32)


def denormalize_depth(depth_norm: np.ndarray, d_max: float) -> np.ndarray:
    """Inverse of :func:`normalize_depth`."""
    return ((depth_norm + 1.0) * 0.5 * d_max).astype(np.float32)


def load_rgbd_sample(
    color_path: str | Path,
    depth_path: str | Path,
    depth_scale: float = 1e-3,
    color_range: tuple[float, float] = (0.0, 1.0),
    target_size: tuple[int, int] | None = None,
) -> RGBDSample:
    """Load one aligned color+depth pair from disk."""
    color = load_image(color_path, target_size=target_size, value_range=color_range)
    depth, mask = load_depth_png(depth_path, depth_scale=depth_scale)
    if target_size is not None and (depth.height, depth.width) != tuple(target_size):
        dense = fill_invalid_depth(depth.data, mask)
        resized = _bilinear_resize(dense[0], tuple(target_size))[None]
        depth = ImageTensor(resized, range_spec=depth.range_spec)
        mask = np.ones(resized.shape[:3], dtype=bool)
    if (color.height, color.width) != (depth.height, depth.width):
        raise DataError(
            f"color {color_path} and depth {depth_path} sizes differ: "
            f"{(color.height, color.width)} vs {(depth.height, depth.width)}"
        )
    return RGBDSample(color=color, depth=depth, depth_valid_mask=mask)


def make_unpaired_batch(
    uw: CorpusIndex,
    aerial: CorpusIndex,
    batch_size: int,
    patch_size: int,
    rng: np.random.Generator,
    d_max: float = 10.0,
    depth_scale: float = 1e-3,
    image_size: int | None = None,
):
    """Draw an unpaired training batch.

    Returns (x, y): x is [b, p, p, 3] underwater patches in [-1, 1]; y is
    [b, p, p, 4] hazy RGB-D patches with depth normalized by the corpus-level
    d_max. Underwater and aerial entries are drawn independently.
    """
    if len(uw) == 0:
        raise ConfigError(f"underwater corpus is empty: {uw.root_path}")
    if len(aerial) == 0:
        raise ConfigError(f"aerial corpus is empty: {aerial.root_path}")
    target = (image_size, image_size) if image_size else None
    xs, ys = [], []
    for _ in range(batch_size):
        img_path, _ = uw.entries[int(rng.integers(len(uw)))]
        x_img = load_image(img_path, target_size=target)
        xs.append(sample_patch(x_img, patch_size, rng).data)

        color_path, depth_path = aerial.entries[int(rng.integers(len(aerial)))]
        pair = load_rgbd_sample(
            color_path, depth_path, depth_scale=depth_scale, color_range=(-1.0, 1.0),
            target_size=target,
        )
        if not pair.depth_valid_mask.all():
            dense = fill_invalid_depth(pair.depth.data, pair.depth_valid_mask)
        else:
            dense = pair.depth.data
        patch = sample_patch(
            RGBDSample(
                color=pair.color,
                depth=ImageTensor(dense, range_spec=pair.depth.range_spec),
                depth_valid_mask=np.ones_like(pair.depth_valid_mask),
            ),
            patch_size,
            rng,
        )
        dn = normalize_depth(patch.depth.data, d_max)
        ys.append(np.concatenate([patch.color.data, dn], axis=-1))
    x = ImageTensor(np.concatenate(xs, axis=0), range_spec=(-1.0, 1.0))
    y = ImageTensor(np.concatenate(ys, axis=0), range_spec=(-1.0, 1.0))
    return x, y
