"""Objective terms for cycle-consistent adversarial training.

All reductions are means over batch and pixels so the gamma weights are
resolution-independent. Every function is differentiable and works in the
dtype of its inputs (float64 supported for gradient checking). Inputs are
NCHW torch tensors; ImageTensor values are converted on entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .data import ImageTensor
from .errors import ShapeError

SSIM_WINDOW_SIZE = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2  # stabilizers for value range L = 1 after internal [0,1] mapping
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    """Weights of the total generator objective; the cycle weight is fixed at 1."""

    gamma_gan: float = 5.0
    gamma_ssim: float = 1.0
    gamma_grad: float = 1.0

    def __post_init__(self):
        if self.gamma_gan < 0 or self.gamma_ssim < 0 or self.gamma_grad < 0:
            raise ValueError(f"loss weights must be >= 0, got {self}")


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, ImageTensor):
        return x.to_torch()
    return x


@dataclass
class CycleBundle:
    """The six tensors of one training cycle (NCHW)."""

    x: torch.Tensor  # underwater, 3ch
    g_x: torch.Tensor  # G(x), 4ch
    f_g_x: torch.Tensor  # F(G(x)), 3ch
    y: torch.Tensor  # aerial RGB-D, 4ch
    f_y: torch.Tensor  # F(y), 3ch
    g_f_y: torch.Tensor  # G(F(y)), 4ch

    def __post_init__(self):
        self.x = _as_tensor(self.x)
        self.g_x = _as_tensor(self.g_x)
        self.f_g_x = _as_tensor(self.f_g_x)
        self.y = _as_tensor(self.y)
        self.f_y = _as_tensor(self.f_y)
        self.g_f_y = _as_tensor(self.g_f_y)
        expected = {"x": 3, "g_x": 4, "f_g_x": 3, "y": 4, "f_y": 3, "g_f_y": 4}
        for name, channels in expected.items():
            t = getattr(self, name)
            if t.ndim != 4 or t.shape[1] != channels:
                raise ShapeError(f"{name} must be NCHW with {channels} channels, got {tuple(t.shape)}")
        if self.x.shape != self.f_g_x.shape or self.y.shape != self.g_f_y.shape:
            raise ShapeError("cycle endpoints must match their reconstructions in shape")


def cycle_loss(bundle: CycleBundle) -> torch.Tensor:
    """L1 reconstruction error of both cycles; the y term covers all 4 channels."""
    return (bundle.x - bundle.f_g_x).abs().mean() + (bundle.y - bundle.g_f_y).abs().mean()


def lsgan_d_loss(d_real, d_fake) -> torch.Tensor:
    """Least-squares discriminator objective: real -> 1, fake -> 0."""
    d_real, d_fake = _as_tensor(d_real), _as_tensor(d_fake)
    return ((d_real - 1.0) ** 2).mean() + (d_fake ** 2).mean()


def lsgan_g_loss(d_fake) -> torch.Tensor:
    """Least-squares generator objective: fool the discriminator toward 1."""
    d_fake = _as_tensor(d_fake)
    return ((d_fake - 1.0) ** 2).mean()


def gaussian_window(size: int, sigma: float, dtype=torch.float32) -> torch.Tensor:
    """2-D Gaussian kernel normalized to sum 1."""
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g1 = torch.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    kernel = g1[:, None] * g1[None, :]
    return kernel / kernel.sum()


def ssim_map(a, b, window_size: int = SSIM_WINDOW_SIZE, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """Per-pixel SSIM index over valid window positions.

    Inputs in [-1, 1] are internally remapped to [0, 1] so the standard
    C1/C2 stabilizers apply; channels are treated independently. Output shape
    is [n, c, h - win + 1, w - win + 1]; its mean is the scalar SSIM.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim inputs must share a shape, got {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.ndim != 4:
        raise ShapeError(f"ssim expects NCHW input, got {tuple(a.shape)}")
    if window_size > a.shape[2] or window_size > a.shape[3]:
        raise ValueError(
            f"ssim window {window_size} larger than image {a.shape[2]}x{a.shape[3]}"
        )
    ua = (a + 1.0) * 0.5
    ub = (b + 1.0) * 0.5
    channels = a.shape[1]
    kernel = gaussian_window(window_size, sigma, dtype=a.dtype)
    kernel = kernel.expand(channels, 1, window_size, window_size).contiguous()

    def _filt(t):
        return F.conv2d(t, kernel, groups=channels)

    mu_a = _filt(ua)
    mu_b = _filt(ub)
    var_a = _filt(ua * ua) - mu_a * mu_a
    var_b = _filt(ub * ub) - mu_b * mu_b
    cov = _filt(ua * ub) - mu_a * mu_b
    lum = (2.0 * mu_a * mu_b + SSIM_C1) / (mu_a ** 2 + mu_b ** 2 + SSIM_C1)
    struct = (2.0 * cov + SSIM_C2) / (var_a + var_b + SSIM_C2)
    return lum * struct


def _rgb(t: torch.Tensor) -> torch.Tensor:
    return t[:, :3]


def ssim_loss(bundle: CycleBundle, window_size: int = SSIM_WINDOW_SIZE, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """Structural loss summed over the four cycle pairs, RGB channels only.

    Pairs: (x, G(x)), (y, F(y)), (G(x), F(G(x))), (F(y), G(F(y))); every
    4-channel participant contributes only its color channels.
    """
    pairs = [
        (bundle.x, _rgb(bundle.g_x)),
        (_rgb(bundle.y), bundle.f_y),
        (_rgb(bundle.g_x), bundle.f_g_x),
        (bundle.f_y, _rgb(bundle.g_f_y)),
    ]
    total = None
    for a, b in pairs:
        term = 1.0 - ssim_map(a, b, window_size, sigma).mean()
        total = term if total is None else total + term
    return total


def grad_sparsity_loss(depth) -> torch.Tensor:
    """L1 norm of forward differences of a 1-channel map, per pixel.

    Replicate boundary: the last row/column difference is zero, so the sum
    runs over defined differences and is divided by the full pixel count.
    """
    depth = _as_tensor(depth)
    if depth.ndim != 4 or depth.shape[1] != 1:
        raise ShapeError(f"grad sparsity expects [n, 1, h, w], got {tuple(depth.shape)}")
    n, _, h, w = depth.shape
    dx = (depth[:, :, :, 1:] - depth[:, :, :, :-1]).abs().sum()
    dy = (depth[:, :, 1:, :] - depth[:, :, :-1, :]).abs().sum()
    return (dx + dy) / (n * h * w)


def total_generator_loss(
    bundle: CycleBundle,
    d_y_on_g_x,
    d_x_on_f_y,
    weights: LossWeights,
    window_size: int = SSIM_WINDOW_SIZE,
    sigma: float = SSIM_SIGMA,
):
    """Weighted sum of cycle, adversarial (both directions), SSIM and gradient terms.

    Returns (total, breakdown) where breakdown holds per-term floats for
    logging and total stays a differentiable tensor.
    """
    l_cyc = cycle_loss(bundle)
    l_gan = lsgan_g_loss(d_y_on_g_x) + lsgan_g_loss(d_x_on_f_y)
    l_ssim = ssim_loss(bundle, window_size, sigma)
    l_grad = grad_sparsity_loss(bundle.g_x[:, 3:4])
    total = (
        l_cyc
        + weights.gamma_gan * l_gan
        + weights.gamma_ssim * l_ssim
        + weights.gamma_grad * l_grad
    )
    breakdown = {
        "l_cyc": float(l_cyc.detach()),
        "l_gan": float(l_gan.detach()),
        "l_ssim": float(l_ssim.detach()),
        "l_grad": float(l_grad.detach()),
        "l_total": float(total.detach()),
    }
    return total, breakdown
