"""Feature-space style transfer modules.

Two of the modules are unbiased in the bilinear content/style sense:

* ``adain`` rescales per-channel statistics; its content factor is the
  standardized feature and its style factor the (mean, std) pair.
* ``wct`` whitens with the content covariance's inverse symmetric square
  root and colors with the style covariance's symmetric square root; its
  content factor is the whitened feature and its style factor the
  (mean, covariance) pair.

Both leave the content factor of their output bit-close to the content
input's factor while exactly adopting the style input's factor, which is
what makes repeated stylization stable. ``patch_swap`` is the deliberate
counterexample: replacing content patches by matched style patches is
not invertible, so repeated application corrupts content.

All functions are pure and operate on float64 (B,C,H,W) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .linalg import SymMatrix, matmul, sym_pow

EPS_STD = 1e-6
# Relative ridge added to raw channel covariances. Kept tiny so transfer
# leaves covariances intact to ~1e-9; the absolute floor only matters for
# exactly constant features.
EPS_COV_REL = 1e-12
EPS_COV_ABS = 1e-12

_KINDS = ("adain", "wct", "patchswap")


@dataclass(frozen=True)
class FeatureStats:
    """Per-channel mean and (floored) standard deviation."""

    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class CovFactor:
    """Mean, channel covariance, and its +-1/2 symmetric powers."""

    mean: np.ndarray
    cov: SymMatrix
    whitener: np.ndarray
    colorer: np.ndarray


@dataclass(frozen=True)
class TransferKind:
    """Transfer module selector; patch parameters apply to patchswap only."""

    name: str
    patch_size: int = 3
    stride: int = 1

    def __post_init__(self):
        if self.name not in _KINDS:
            raise ShapeError(f"unknown transfer kind {self.name!r}; known: {_KINDS}")
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ShapeError(f"patch_size must be odd and >= 1, got {self.patch_size}")
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")


ADAIN = TransferKind("adain")
WCT = TransferKind("wct")
PATCHSWAP = TransferKind("patchswap")


def _check_feature(f, name) -> np.ndarray:
    a = np.asarray(f, dtype=np.float64)
    if a.ndim != 4:
        raise ShapeError(f"{name} must be (B,C,H,W), got shape {a.shape}")
    if a.shape[2] * a.shape[3] == 0:
        raise ShapeError(f"{name} has an empty spatial extent")
    return a


def channel_stats(f) -> FeatureStats:
    """Per-channel moments over batch and spatial positions.

    Standard deviation uses the population convention (divide by N) and
    is floored at 1e-6 so constant channels stay usable downstream.
    """
    a = _check_feature(f, "feature")
    mean = a.mean(axis=(0, 2, 3))
    std = np.maximum(a.std(axis=(0, 2, 3)), EPS_STD)
    return FeatureStats(mean=mean, std=std)


def _bc(v):
    return v[np.newaxis, :, np.newaxis, np.newaxis]


def adain(f_c, f_s) -> np.ndarray:
    """Match the content feature's per-channel mean/std to the style's."""
    a = _check_feature(f_c, "content feature")
    b = _check_feature(f_s, "style feature")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"channel mismatch: content {a.shape[1]}, style {b.shape[1]}")
    sc, ss = channel_stats(a), channel_stats(b)
    return _bc(ss.std) * (a - _bc(sc.mean)) / _bc(sc.std) + _bc(ss.mean)


def adain_content_factor(f) -> np.ndarray:
    """Standardized feature: (f - mean) / std per channel."""
    a = _check_feature(f, "feature")
    s = channel_stats(a)
    return (a - _bc(s.mean)) / _bc(s.std)


def adain_style_factor(f) -> FeatureStats:
    return channel_stats(f)


def apply_style_factor(content_factor, stats: FeatureStats) -> np.ndarray:
    """Recombine: std * content_factor + mean."""
    a = _check_feature(content_factor, "content factor")
    return _bc(stats.std) * a + _bc(stats.mean)


def _flatten_channels(a) -> np.ndarray:
    """(B,C,H,W) -> (C, B*H*W) sample matrix."""
    return np.ascontiguousarray(a.transpose(1, 0, 2, 3)).reshape(a.shape[1], -1)


def cov_factor(f) -> CovFactor:
    """Mean and regularized channel covariance with its +-1/2 powers.

    The covariance of the centered samples gets a ridge of
    ``1e-12 * trace/c`` (an absolute 1e-12 when the trace vanishes) so
    exactly constant features still produce finite whiteners;
    rank-deficient covariances are additionally protected by the
    eigenvalue clamp inside ``sym_pow``.
    """
    a = _check_feature(f, "feature")
    x = _flatten_channels(a)
    n = x.shape[1]
    if n < 2:
        raise ShapeError(f"covariance needs at least 2 samples, got {n}")
    mean = x.mean(axis=1)
    xc = x - mean[:, np.newaxis]
    cov_raw = matmul(xc, xc.T) / n
    trace = float(np.trace(cov_raw))
    eps = max(EPS_COV_REL * trace / x.shape[0], EPS_COV_ABS if trace <= 0.0 else 0.0)
    cov = SymMatrix(cov_raw + eps * np.eye(x.shape[0]))
    return CovFactor(
        mean=mean,
        cov=cov,
        whitener=sym_pow(cov, -0.5),
        colorer=sym_pow(cov, +0.5),
    )


def wct_content_factor(f) -> np.ndarray:
    """Whitened feature: cov^{-1/2} (f - mean), identity covariance."""
    a = _check_feature(f, "feature")
    factor = cov_factor(a)
    x = _flatten_channels(a)
    white = matmul(factor.whitener, x - factor.mean[:, np.newaxis])
    return _unflatten_channels(white, a.shape)


def wct_style_factor(f) -> CovFactor:
    return cov_factor(f)


def _unflatten_channels(x, shape) -> np.ndarray:
    b, c, h, w = shape
    return np.ascontiguousarray(x.reshape(c, b, h, w).transpose(1, 0, 2, 3))


def wct(f_c, f_s) -> np.ndarray:
    """Whiten the content feature, then color it with the style covariance."""
    a = _check_feature(f_c, "content feature")
    b = _check_feature(f_s, "style feature")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"channel mismatch: content {a.shape[1]}, style {b.shape[1]}")
    fc, fs = cov_factor(a), cov_factor(b)
    x = _flatten_channels(a)
    white = matmul(fc.whitener, x - fc.mean[:, np.newaxis])
    colored = matmul(fs.colorer, white) + fs.mean[:, np.newaxis]
    return _unflatten_channels(colored, a.shape)


def apply_cov_factor(content_factor, factor: CovFactor) -> np.ndarray:
    """Recombine: cov^{1/2} * whitened_factor + mean."""
    a = _check_feature(content_factor, "content factor")
    x = _flatten_channels(a)
    colored = matmul(factor.colorer, x) + factor.mean[:, np.newaxis]
    return _unflatten_channels(colored, a.shape)


def _patch_grid(extent: int, patch: int, stride: int) -> list[int]:
    # Tail position appended so the whole feature is covered even when
    # stride does not divide (extent - patch).
    last = extent - patch
    grid = list(range(0, last + 1, stride))
    if grid[-1] != last:
        grid.append(last)
    return grid


def patch_swap(f_c, f_s, patch_size: int = 3, stride: int = 1) -> np.ndarray:
    """Replace every content patch by its best-matching style patch.

    Matching maximizes cosine similarity of channel-unrolled patches
    (ties go to the lowest style patch index); overlapping replacements
    are averaged. This transfer is intentionally *not* invertible.
    """
    a = _check_feature(f_c, "content feature")
    b = _check_feature(f_s, "style feature")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"channel mismatch: content {a.shape[1]}, style {b.shape[1]}")
    if patch_size < 1 or stride < 1:
        raise ShapeError("patch_size and stride must be >= 1")
    for name, arr in (("content", a), ("style", b)):
        if patch_size > arr.shape[2] or patch_size > arr.shape[3]:
            raise ShapeError(
                f"patch {patch_size} exceeds {name} extent "
                f"{arr.shape[2]}x{arr.shape[3]}"
            )
    out = np.empty_like(a)
    for bi in range(a.shape[0]):
        out[bi] = _patch_swap_single(a[bi], b[bi % b.shape[0]], patch_size, stride)
    return out


def _extract_patches(x, grid_y, grid_x, ps):
    patches = np.stack(
        [x[:, y : y + ps, x0 : x0 + ps] for y in grid_y for x0 in grid_x]
    )
    return patches.reshape(patches.shape[0], -1)


def _patch_swap_single(content, style, ps, stride):
    c_gy = _patch_grid(content.shape[1], ps, stride)
    c_gx = _patch_grid(content.shape[2], ps, stride)
    s_gy = _patch_grid(style.shape[1], ps, stride)
    s_gx = _patch_grid(style.shape[2], ps, stride)

    c_patches = _extract_patches(content, c_gy, c_gx, ps)
    s_patches = _extract_patches(style, s_gy, s_gx, ps)
    c_norm = c_patches / np.maximum(
        np.linalg.norm(c_patches, axis=1, keepdims=True), 1e-12
    )
    s_norm = s_patches / np.maximum(
        np.linalg.norm(s_patches, axis=1, keepdims=True), 1e-12
    )
    sims = c_norm @ s_norm.T
    matches = np.argmax(sims, axis=1)  # first max wins: lowest style index

    acc = np.zeros_like(content)
    cover = np.zeros(content.shape[1:])
    c_channels = content.shape[0]
    for p, (y, x0) in enumerate((y, x0) for y in c_gy for x0 in c_gx):
        chosen = s_patches[matches[p]].reshape(c_channels, ps, ps)
        acc[:, y : y + ps, x0 : x0 + ps] += chosen
        cover[y : y + ps, x0 : x0 + ps] += 1.0
    return acc / cover[np.newaxis, :, :]


def transfer_apply(kind: TransferKind, f_c, f_s, alpha: float = 1.0) -> np.ndarray:
    """Dispatch to the selected module, then blend with the content.

    ``alpha`` interpolates between the untouched content feature (0) and
    the fully transferred feature (1).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ShapeError(f"alpha must lie in [0, 1], got {alpha}")
    a = _check_feature(f_c, "content feature")
    if kind.name == "adain":
        f_cs = adain(a, f_s)
    elif kind.name == "wct":
        f_cs = wct(a, f_s)
    else:
        f_cs = patch_swap(a, f_s, kind.patch_size, kind.stride)
    if alpha == 1.0:
        return f_cs
    return alpha * f_cs + (1.0 - alpha) * a
