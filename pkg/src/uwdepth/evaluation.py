"""Depth inference and the two scale-invariant metrics with validity masking.

Only pixels marked valid in the ground truth enter either metric. Per-image
values are averaged over images without weighting by pixel count; images
whose metric is undefined (zero variance) are excluded from the means and
counted in the report.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .data import ImageTensor, denormalize_depth
from .errors import (
    ConfigError,
    DataError,
    EvaluationError,
    UndefinedMetricError,
)
from .models import GeneratorSpec, NetworkParams

log = logging.getLogger(__name__)

POSITIVE_SHIFT_EPS = 1e-3


@dataclass
class DepthPrediction:
    """Network depth output in both value conventions."""

    normalized: ImageTensor  # 1-channel, [-1, 1]
    meters: ImageTensor  # denormalized with the corpus d_max

    def normalized_2d(self) -> np.ndarray:
        return self.normalized.data[0, :, :, 0]

    def meters_2d(self) -> np.ndarray:
        return self.meters.data[0, :, :, 0]


def infer_depth(G: NetworkParams, uw_image, d_max: float = 10.0) -> DepthPrediction:
    """Predict depth for one underwater image.

    Accepts an ImageTensor or NCHW tensor with 3 channels; sizes that are not
    divisible by the generator's downsampling factor are reflect-padded and
    the output cropped back.
    """
    if not isinstance(G.spec, GeneratorSpec) or G.spec.in_channels != 3 or G.spec.out_channels != 4:
        raise ConfigError(
            f"depth inference needs a 3->4 channel generator, got role {G.role_tag!r} "
            f"with spec {G.spec}"
        )
    t = uw_image.to_torch() if isinstance(uw_image, ImageTensor) else uw_image
    if t.ndim != 4 or t.shape[1] != 3:
        raise ConfigError(f"expected NCHW input with 3 channels, got {tuple(t.shape)}")
    divisor = G.spec.spatial_divisor
    h, w = t.shape[2], t.shape[3]
    pad_h = (-h) % divisor
    pad_w = (-w) % divisor
    with torch.no_grad():
        if pad_h or pad_w:
            padded = F.pad(t, (0, pad_w, 0, pad_h), mode="reflect")
            out = G.module(padded)[:, :, :h, :w]
        else:
            out = G.module(t)
    depth_norm = out[:, 3:4]
    normalized = ImageTensor.from_torch(depth_norm, range_spec=(-1.0, 1.0))
    meters = ImageTensor(
        denormalize_depth(normalized.data, d_max), range_spec=(0.0, float(d_max))
    )
    return DepthPrediction(normalized=normalized, meters=meters)


def _masked_pair(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DataError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    if mask is None:
        return pred.ravel(), gt.ravel()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != gt.shape:
        raise DataError(f"mask shape {mask.shape} != gt shape {gt.shape}")
    return pred[mask], gt[mask]


def pearson(pred, gt, mask=None) -> float:
    """Pearson correlation cov(X,Y)/(sigma_x sigma_y) over masked pixels."""
    p, g = _masked_pair(pred, gt, mask)
    if p.size < 2:
        raise UndefinedMetricError(f"pearson needs >= 2 valid pixels, got {p.size}")
    dp = p - p.mean()
    dg = g - g.mean()
    denom = np.sqrt((dp * dp).mean() * (dg * dg).mean())
    if denom == 0.0:
        raise UndefinedMetricError("pearson undefined: zero variance in pred or gt")
    rho = float((dp * dg).mean() / denom)
    return min(1.0, max(-1.0, rho))


def si_mse(pred, gt, mask=None) -> float:
    """Log scale-invariant MSE: mean(e^2) - mean(e)^2 with e = log pred - log gt."""
    p, g = _masked_pair(pred, gt, mask)
    if p.size < 1:
        raise UndefinedMetricError("si_mse needs at least one valid pixel")
    if p.min() <= 0 or g.min() <= 0:
        raise DataError("si_mse requires positive depth on masked pixels")
    e = np.log(p) - np.log(g)
    return float((e * e).mean() - e.mean() ** 2)


def shift_to_positive(depth_normalized: np.ndarray, eps: float = POSITIVE_SHIFT_EPS) -> np.ndarray:
    """Map a [-1, 1] depth map to strictly positive values: (d + 1)/2 + eps."""
    return (np.asarray(depth_normalized, dtype=np.float64) + 1.0) * 0.5 + eps


@dataclass
class EvalItem:
    """One evaluation case: underwater image, ground-truth depth, valid mask."""

    image_id: str
    uw_image: ImageTensor | None
    gt_depth: np.ndarray  # 2-D meters
    mask: np.ndarray  # 2-D bool
    pred_depth: np.ndarray | None = None  # precomputed prediction, bypasses inference


@dataclass
class PerImageResult:
    image_id: str
    rho: float
    si_mse: float
    valid_pixel_count: int
    shift_applied: float = 0.0


@dataclass
class EvalReport:
    per_image: list[PerImageResult]
    mean_rho: float
    mean_si_mse: float
    excluded: list[str] = field(default_factory=list)
    shift_eps: float = POSITIVE_SHIFT_EPS

    def to_dict(self) -> dict:
        return {
            "per_image": [asdict(r) for r in self.per_image],
            "mean_rho": self.mean_rho,
            "mean_si_mse": self.mean_si_mse,
            "excluded": list(self.excluded),
            "shift_eps": self.shift_eps,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            per_image=[PerImageResult(**r) for r in d["per_image"]],
            mean_rho=d["mean_rho"],
            mean_si_mse=d["mean_si_mse"],
            excluded=list(d.get("excluded", [])),
            shift_eps=d.get("shift_eps", POSITIVE_SHIFT_EPS),
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def _positive_prediction(pred: np.ndarray, eps: float) -> tuple[np.ndarray, float]:
    """Make a raw prediction log-safe; returns (positive map, shift applied)."""
    pred = np.asarray(pred, dtype=np.float64)
    lo = pred.min()
    if lo > 0:
        return pred, 0.0
    shift = -lo + eps
    return pred + shift, float(shift)


def evaluate_corpus(G, eval_set: list[EvalItem], d_max: float = 10.0) -> EvalReport:
    """Per-image metrics and their unweighted means over an evaluation set.

    ``G`` is a NetworkParams generator or any callable mapping an ImageTensor
    to a 2-D depth map; items carrying ``pred_depth`` skip inference. Network
    outputs in [-1, 1] are made log-safe with the fixed eps shift; precomputed
    predictions are shifted only if they contain non-positive values, and the
    applied shift is recorded per image.
    """
    if not eval_set:
        raise EvaluationError("evaluation set is empty")
    per_image: list[PerImageResult] = []
    excluded: list[str] = []
    for item in sorted(eval_set, key=lambda it: it.image_id):
        if item.pred_depth is not None:
            pred, shift = _positive_prediction(item.pred_depth, POSITIVE_SHIFT_EPS)
        elif isinstance(G, NetworkParams):
            pred_norm = infer_depth(G, item.uw_image, d_max=d_max).normalized_2d()
            pred = shift_to_positive(pred_norm)
            shift = POSITIVE_SHIFT_EPS
        elif callable(G):
            pred, shift = _positive_prediction(np.asarray(G(item.uw_image)), POSITIVE_SHIFT_EPS)
        else:
            raise ConfigError(f"cannot produce predictions with {type(G).__name__}")
        mask = np.asarray(item.mask, dtype=bool)
        try:
            rho = pearson(pred, item.gt_depth, mask)
            si = si_mse(pred, item.gt_depth, mask)
        except UndefinedMetricError as exc:
            log.warning("excluding %s from means: %s", item.image_id, exc)
            excluded.append(item.image_id)
            continue
        per_image.append(
            PerImageResult(
                image_id=item.image_id,
                rho=rho,
                si_mse=si,
                valid_pixel_count=int(mask.sum()),
                shift_applied=shift,
            )
        )
    if not per_image:
        raise EvaluationError("every evaluation image had an undefined metric")
    mean_rho = float(np.mean([r.rho for r in per_image]))
    mean_si = float(np.mean([r.si_mse for r in per_image]))
    return EvalReport(
        per_image=per_image, mean_rho=mean_rho, mean_si_mse=mean_si, excluded=excluded
    )
