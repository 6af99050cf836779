"""Raster operations: bilinear warping with validity masks, Sobel gradients,
2x pyramid downsampling and 3x3 SSIM.

Grids are float64 arrays of shape (H, W); images are (H, W, C) with C in
{1, 3} and values in [0, 1]. Every differentiable operation has an adjoint
next to it (`*_grad` / `*_adjoint`) used by the loss backpropagation.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from errors import InvalidInputError
from geometry import ProjectionMap

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
BOX_3X3 = np.full((3, 3), 1.0 / 9.0)

# coordinates this close to the raster bounds count as on them
BOUNDS_TOLERANCE = 1e-9


def check_grid(grid: np.ndarray, name: str = "grid") -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty HxW grid, got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        row, col = np.argwhere(~np.isfinite(grid))[0]
        raise InvalidInputError(f"{name} has a non-finite entry at pixel (u={col}, v={row})")
    return grid


def check_image(image: np.ndarray, name: str = "image") -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise InvalidInputError(f"{name} must be HxWx1 or HxWx3, got shape {image.shape}")
    if not np.all(np.isfinite(image)) or image.min() < 0.0 or image.max() > 1.0:
        raise InvalidInputError(f"{name} values must lie in [0, 1]")
    return image


def _as_channels(source: np.ndarray) -> np.ndarray:
    return source[..., None] if source.ndim == 2 else source


def _fold_replicate_padding(padded: np.ndarray) -> np.ndarray:
    """Adjoint of 1-pixel edge padding: add the border back onto the edge pixels."""
    out = padded[1:-1, 1:-1].copy()
    out[0, :] += padded[0, 1:-1]
    out[-1, :] += padded[-1, 1:-1]
    out[:, 0] += padded[1:-1, 0]
    out[:, -1] += padded[1:-1, -1]
    out[0, 0] += padded[0, 0]
    out[0, -1] += padded[0, -1]
    out[-1, 0] += padded[-1, 0]
    out[-1, -1] += padded[-1, -1]
    return out


def _filter3x3(grid: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return ndimage.correlate(grid, kernel, mode="nearest")


def _filter3x3_adjoint(grad: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    spread = ndimage.convolve(np.pad(grad, 1), kernel, mode="constant", cval=0.0)
    return _fold_replicate_padding(spread)


# --- bilinear sampling ---


def _bilinear_corners(proj: ProjectionMap, height: int, width: int):
    u = proj.coords[..., 0]
    v = proj.coords[..., 1]
    tol = BOUNDS_TOLERANCE
    valid = proj.in_front & (u >= -tol) & (u <= width - 1 + tol) & (v >= -tol) & (v <= height - 1 + tol)
    u = np.where(valid, np.clip(u, 0.0, width - 1), 0.0)
    v = np.where(valid, np.clip(v, 0.0, height - 1), 0.0)
    # floor gives the right/down subgradient on lattice lines
    x0 = np.minimum(np.floor(u).astype(np.int64), max(width - 2, 0))
    y0 = np.minimum(np.floor(v).astype(np.int64), max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    return valid, x0, x1, y0, y1, u - x0, v - y0


def bilinear_sample(source: np.ndarray, proj: ProjectionMap) -> tuple[np.ndarray, np.ndarray]:
    """Sample `source` at the continuous coordinates of `proj`.

    Returns the sampled raster (same channel layout as `source`) and the
    validity mask; masked-out pixels are 0.
    """
    source = np.asarray(source, dtype=np.float64)
    src = _as_channels(source)
    height, width = src.shape[:2]
    valid, x0, x1, y0, y1, wx, wy = _bilinear_corners(proj, height, width)
    wx, wy = wx[..., None], wy[..., None]
    sampled = (
        (1 - wx) * (1 - wy) * src[y0, x0]
        + wx * (1 - wy) * src[y0, x1]
        + (1 - wx) * wy * src[y1, x0]
        + wx * wy * src[y1, x1]
    )
    sampled = np.where(valid[..., None], sampled, 0.0)
    if source.ndim == 2:
        sampled = sampled[..., 0]
    return sampled, valid.astype(np.float64)


def bilinear_sample_grad(
    source: np.ndarray, proj: ProjectionMap, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate `grad_out` through bilinear_sample.

    Returns (gradient w.r.t. source values, gradient w.r.t. coords (H, W, 2)).
    """
    source = np.asarray(source, dtype=np.float64)
    src = _as_channels(source)
    g = _as_channels(np.asarray(grad_out, dtype=np.float64))
    height, width, channels = src.shape
    valid, x0, x1, y0, y1, wx, wy = _bilinear_corners(proj, height, width)
    g = np.where(valid[..., None], g, 0.0)
    c00, c01, c10, c11 = src[y0, x0], src[y0, x1], src[y1, x0], src[y1, x1]
    wx3, wy3 = wx[..., None], wy[..., None]
    d_u = (1 - wy3) * (c01 - c00) + wy3 * (c11 - c10)
    d_v = (1 - wx3) * (c10 - c00) + wx3 * (c11 - c01)
    grad_coords = np.stack([(g * d_u).sum(axis=-1), (g * d_v).sum(axis=-1)], axis=-1)

    grad_source = np.zeros((height * width, channels))
    corners = (
        (y0, x0, (1 - wx) * (1 - wy)),
        (y0, x1, wx * (1 - wy)),
        (y1, x0, (1 - wx) * wy),
        (y1, x1, wx * wy),
    )
    for yi, xi, w in corners:
        index = (yi * width + xi).ravel()
        for c in range(channels):
            grad_source[:, c] += np.bincount(index, weights=(w * g[..., c]).ravel(), minlength=height * width)
    grad_source = grad_source.reshape(height, width, channels)
    if source.ndim == 2:
        grad_source = grad_source[..., 0]
    return grad_source, grad_coords


# --- Sobel ---


def sobel_gradients(grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    grid = check_grid(grid)
    if grid.shape[0] < 3 or grid.shape[1] < 3:
        raise InvalidInputError(f"Sobel gradients need at least a 3x3 grid, got {grid.shape}")
    return _filter3x3(grid, SOBEL_X), _filter3x3(grid, SOBEL_Y)


def sobel_gradients_adjoint(grad_gx: np.ndarray, grad_gy: np.ndarray) -> np.ndarray:
    return _filter3x3_adjoint(grad_gx, SOBEL_X) + _filter3x3_adjoint(grad_gy, SOBEL_Y)


# --- pyramid ---


def downsample2x(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    height, width = grid.shape[:2]
    if height % 2 or width % 2:
        raise InvalidInputError(f"Downsampling needs even dimensions, got {height}x{width}")
    return 0.25 * ((grid[0::2, 0::2] + grid[0::2, 1::2]) + (grid[1::2, 0::2] + grid[1::2, 1::2]))


def downsample2x_adjoint(grad: np.ndarray) -> np.ndarray:
    return 0.25 * np.repeat(np.repeat(grad, 2, axis=0), 2, axis=1)


# --- SSIM ---


def _box(x: np.ndarray) -> np.ndarray:
    return ndimage.uniform_filter(x, size=3, mode="nearest")


def _ssim_statistics(a: np.ndarray, b: np.ndarray):
    mu_a, mu_b = _box(a), _box(b)
    var_a = _box(a * a) - mu_a * mu_a
    var_b = _box(b * b) - mu_b * mu_b
    cov = _box(a * b) - mu_a * mu_b
    num1 = 2 * mu_a * mu_b + SSIM_C1
    num2 = 2 * cov + SSIM_C2
    den1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1
    den2 = var_a + var_b + SSIM_C2
    return mu_a, mu_b, num1, num2, den1, den2


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = _as_channels(np.asarray(a, dtype=np.float64))
    b = _as_channels(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise InvalidInputError(f"SSIM inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM over 3x3 box windows, averaged over channels."""
    a, b = _check_pair(a, b)
    total = np.zeros(a.shape[:2])
    for c in range(a.shape[2]):
        _, _, num1, num2, den1, den2 = _ssim_statistics(a[..., c], b[..., c])
        total += (num1 * num2) / (den1 * den2)
    return total / a.shape[2]


def ssim_map_grad(a: np.ndarray, b: np.ndarray, grad_map: np.ndarray) -> np.ndarray:
    """Gradient of sum(grad_map * ssim_map(a, b)) with respect to b."""
    a, b = _check_pair(a, b)
    channels = a.shape[2]
    g = np.asarray(grad_map, dtype=np.float64) / channels
    grad_b = np.zeros_like(b)
    for c in range(channels):
        ac, bc = a[..., c], b[..., c]
        mu_a, mu_b, num1, num2, den1, den2 = _ssim_statistics(ac, bc)
        den = den1 * den2
        ssim = (num1 * num2) / den
        # partials with respect to box(b), box(b*b) and box(a*b)
        d_mu_b = (2 * mu_a * num2 - 2 * mu_a * num1) / den - ssim * (2 * mu_b / den1 - 2 * mu_b / den2)
        d_bb = -ssim / den2
        d_ab = 2 * num1 / den
        grad_b[..., c] = (
            _filter3x3_adjoint(g * d_mu_b, BOX_3X3)
            + 2 * bc * _filter3x3_adjoint(g * d_bb, BOX_3X3)
            + ac * _filter3x3_adjoint(g * d_ab, BOX_3X3)
        )
    return grad_b
