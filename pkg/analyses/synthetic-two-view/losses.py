"""Self-supervised two-view objective on real (scale-transformed) depth.

Per pyramid level and view: L1 photometric, 3x3 SSIM, adaptive edge-aware
Sobel smoothness and normalised geometric consistency. The gradient with
respect to both relative-depth fields is computed by hand in reverse mode,
treating the adaptive smoothness weights as constants.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from errors import InvalidInputError, NoOverlapError
from geometry import CameraIntrinsics, ProjectionMap, RigidPose, project_pixels, relative_pose
from imaging import (
    bilinear_sample,
    bilinear_sample_grad,
    check_grid,
    check_image,
    downsample2x,
    downsample2x_adjoint,
    sobel_gradients,
    sobel_gradients_adjoint,
    ssim_map,
    ssim_map_grad,
)
from scale import MedianDepth, scale_transform

SIGMA_MODES = ("literal", "mean")
TERMS = ("photometric", "geometric", "ssim", "smoothness")
TERM_COLUMNS = {"photometric": "ph", "geometric": "gc", "ssim": "ssim", "smoothness": "smooth"}


@dataclass(frozen=True)
class LossWeights:
    lambda_ph: float = 0.15
    lambda_gc: float = 0.1
    lambda_ssim: float = 0.85
    lambda_smooth_base: float = 0.01
    c: float = 5.0
    num_scales: int = 4
    sigma_mode: str = "literal"
    # off: D = exp(D_rel), the variant trained without the median scale
    scale_transform: bool = True

    def __post_init__(self):
        for name in ("lambda_ph", "lambda_gc", "lambda_ssim", "lambda_smooth_base"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise InvalidInputError(f"{name} must be a non-negative number, got {value}")
        if not np.isfinite(self.c) or self.c <= 0:
            raise InvalidInputError(f"c must be positive, got {self.c}")
        if self.num_scales not in (1, 2, 3, 4):
            raise InvalidInputError(f"num_scales must be in [1, 4], got {self.num_scales}")
        if self.sigma_mode not in SIGMA_MODES:
            raise InvalidInputError(f"sigma_mode must be one of {SIGMA_MODES}, got '{self.sigma_mode}'")

    @classmethod
    def zero(cls, **kwargs) -> LossWeights:
        return cls(lambda_ph=0.0, lambda_gc=0.0, lambda_ssim=0.0, lambda_smooth_base=0.0, **kwargs)

    def smooth_weight(self, level: int) -> float:
        return self.lambda_smooth_base / 2**level


@dataclass
class ScenePair:
    image1: np.ndarray
    image2: np.ndarray
    k1: CameraIntrinsics
    k2: CameraIntrinsics
    pose1: RigidPose  # camera-to-world
    pose2: RigidPose
    mu1: MedianDepth
    mu2: MedianDepth
    gt1: Optional[np.ndarray] = None
    gt2: Optional[np.ndarray] = None

    def __post_init__(self):
        self.image1 = check_image(self.image1, "image1")
        self.image2 = check_image(self.image2, "image2")
        if self.image1.shape != self.image2.shape:
            raise InvalidInputError(f"View images differ in shape: {self.image1.shape} vs {self.image2.shape}")
        if not isinstance(self.mu1, MedianDepth):
            self.mu1 = MedianDepth(float(self.mu1))
        if not isinstance(self.mu2, MedianDepth):
            self.mu2 = MedianDepth(float(self.mu2))
        for name in ("gt1", "gt2"):
            gt = getattr(self, name)
            if gt is not None and np.shape(gt) != self.shape:
                raise InvalidInputError(f"{name} has shape {np.shape(gt)}, views are {self.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.image1.shape[:2]

    @property
    def pose_12(self) -> RigidPose:
        return relative_pose(self.pose1, self.pose2)

    @property
    def pose_21(self) -> RigidPose:
        return relative_pose(self.pose2, self.pose1)

    def swapped(self) -> ScenePair:
        return ScenePair(
            self.image2, self.image1, self.k2, self.k1, self.pose2, self.pose1, self.mu2, self.mu1, self.gt2, self.gt1
        )

    def scaled(self, k: float) -> ScenePair:
        """Same images with all metric quantities (translations, medians, GT) multiplied by k."""
        return ScenePair(
            self.image1,
            self.image2,
            self.k1,
            self.k2,
            self.pose1.scaled(k),
            self.pose2.scaled(k),
            MedianDepth(self.mu1.value * k),
            MedianDepth(self.mu2.value * k),
            None if self.gt1 is None else self.gt1 * k,
            None if self.gt2 is None else self.gt2 * k,
        )


@dataclass
class ScaleTerms:
    """Loss terms of one pyramid level; tuples hold (view 1, view 2)."""

    level: int
    photometric: tuple[float, float]
    geometric: tuple[float, float]
    ssim: tuple[float, float]
    smoothness: tuple[float, float]
    valid_counts: tuple[int, int]

    @property
    def factor(self) -> int:
        return 2**self.level


@dataclass
class LossBreakdown:
    scales: list[ScaleTerms]
    weights: LossWeights
    total: float

    def term(self, name: str, level: Optional[int] = None) -> float:
        levels = self.scales if level is None else [self.scales[level]]
        return float(sum(sum(getattr(s, name)) for s in levels))

    def weighted_total(self) -> float:
        w = self.weights
        total = 0.0
        for s in self.scales:
            total += (
                w.lambda_ph * sum(s.photometric)
                + w.lambda_gc * sum(s.geometric)
                + w.lambda_ssim * sum(s.ssim)
                + w.smooth_weight(s.level) * sum(s.smoothness)
            )
        return total

    def csv_rows(self) -> list[list]:
        """Rows of (scale, term, view, value, valid_count), total last."""
        rows = []
        for s in self.scales:
            for name in TERMS:
                for view, value in enumerate(getattr(s, name), start=1):
                    rows.append([s.level, name, view, float(value), s.valid_counts[view - 1]])
        rows.append(["all", "total", "", float(self.total), ""])
        return rows

    def column_names(self) -> list[str]:
        return [f"{TERM_COLUMNS[name]}_s{s.level}" for s in self.scales for name in TERMS]

    def column_values(self) -> list[float]:
        return [self.term(name, s.level) for s in self.scales for name in TERMS]


CSV_HEADER = ["scale", "term", "view", "value", "valid_count"]


# --- individual terms ---


def _valid_count(mask: np.ndarray) -> float:
    count = float(np.sum(mask))
    if count == 0:
        raise NoOverlapError("No valid pixels: the views do not overlap")
    return count


def photometric_loss(
    target: np.ndarray, reconstructed: np.ndarray, mask: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean over valid pixels of the channel-averaged L1 error, and the masked per-pixel residual."""
    if np.shape(target) != np.shape(reconstructed):
        raise InvalidInputError(f"Shape mismatch: {np.shape(target)} vs {np.shape(reconstructed)}")
    count = _valid_count(mask)
    residual = np.abs(np.asarray(target) - np.asarray(reconstructed)).reshape(*np.shape(mask), -1).mean(axis=-1) * mask
    return float(residual.sum() / count), residual


def photometric_loss_grad(target: np.ndarray, reconstructed: np.ndarray, mask: np.ndarray) -> np.ndarray:
    count = _valid_count(mask)
    channels = reconstructed.shape[-1]
    return np.sign(reconstructed - target) * (mask / (channels * count))[..., None]


def _channel_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return mask if np.ndim(image) == 2 else mask[..., None]


def _filled(target: np.ndarray, reconstructed: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Reconstruction with masked pixels replaced by the target, so they drop out of neighbouring windows."""
    return np.where(_channel_mask(target, mask) > 0, reconstructed, target)


def _ssim_view(target: np.ndarray, reconstructed: np.ndarray, mask: np.ndarray) -> float:
    count = _valid_count(mask)
    dissimilarity = np.maximum(1.0 - ssim_map(target, _filled(target, reconstructed, mask)), 0.0)
    return float(np.sum(dissimilarity * mask) / count)


def _ssim_view_grad(target: np.ndarray, reconstructed: np.ndarray, mask: np.ndarray) -> np.ndarray:
    count = _valid_count(mask)
    filled = _filled(target, reconstructed, mask)
    # the clamp at 0 is flat where the windows agree exactly
    active = mask * (ssim_map(target, filled) < 1.0)
    grad = ssim_map_grad(target, filled, -active / count)
    return grad * _channel_mask(grad, mask)


def ssim_loss(
    a: np.ndarray,
    a_rec: np.ndarray,
    b: np.ndarray,
    b_rec: np.ndarray,
    masks: Sequence[np.ndarray],
) -> float:
    mask_a, mask_b = masks
    return _ssim_view(a, a_rec, mask_a) + _ssim_view(b, b_rec, mask_b)


def adaptive_weights(residual: np.ndarray, c: float, sigma_mode: str = "literal") -> np.ndarray:
    """alpha(p) = exp(-c * residual(p) / sigma) with sigma = 1 / mean(residual) ("literal")
    or sigma = mean(residual) ("mean"). An all-zero residual gives alpha = 1."""
    residual = np.asarray(residual, dtype=np.float64)
    if np.any(residual < 0):
        raise InvalidInputError("Residuals must be non-negative")
    if sigma_mode not in SIGMA_MODES:
        raise InvalidInputError(f"sigma_mode must be one of {SIGMA_MODES}, got '{sigma_mode}'")
    mean = residual.mean()
    if mean == 0:
        return np.ones_like(residual)
    if sigma_mode == "literal":
        return np.exp(-c * residual * mean)
    return np.exp(-c * residual / mean)


def _edge_weights(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gray = np.asarray(image, dtype=np.float64)
    if gray.ndim == 3:
        gray = gray.mean(axis=-1)
    ix, iy = sobel_gradients(gray)
    return np.exp(-np.abs(ix)), np.exp(-np.abs(iy))


def smoothness_loss(relative: np.ndarray, image: np.ndarray, alpha: np.ndarray) -> float:
    relative = check_grid(relative, "relative depth")
    if np.shape(alpha) != relative.shape or np.shape(image)[:2] != relative.shape:
        raise InvalidInputError(f"Smoothness inputs differ in shape: {relative.shape}, {np.shape(image)}, {np.shape(alpha)}")
    ex, ey = _edge_weights(image)
    dx, dy = sobel_gradients(relative)
    return float(np.mean(alpha * (np.abs(dx) * ex + np.abs(dy) * ey)))


def smoothness_loss_grad(relative: np.ndarray, image: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    ex, ey = _edge_weights(image)
    dx, dy = sobel_gradients(relative)
    n = relative.size
    return sobel_gradients_adjoint(alpha * ex * np.sign(dx) / n, alpha * ey * np.sign(dy) / n)


def consistency_ratio(projected: np.ndarray, sampled: np.ndarray) -> np.ndarray:
    """|a - b| / (a + b), the per-pixel geometric consistency term."""
    projected, sampled = np.asarray(projected, dtype=np.float64), np.asarray(sampled, dtype=np.float64)
    return np.abs(projected - sampled) / (projected + sampled)


def _gc_view(proj: ProjectionMap, other_depth: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    count = _valid_count(mask)
    sampled, _ = bilinear_sample(other_depth, proj)
    valid = mask > 0
    projected = np.where(valid, proj.projected_depth, 1.0)
    sampled_safe = np.where(valid, sampled, 1.0)
    term = consistency_ratio(projected, sampled_safe) * mask
    return float(term.sum() / count), sampled


def _gc_view_grads(
    proj: ProjectionMap, sampled: np.ndarray, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of one view's consistency term w.r.t. projected and sampled depth."""
    count = _valid_count(mask)
    valid = mask > 0
    q = np.where(valid, proj.projected_depth, 1.0)
    s = np.where(valid, sampled, 1.0)
    total = q + s
    sign = np.sign(q - s)
    ratio = np.abs(q - s) / (total * total)
    scale = mask / count
    return (sign / total - ratio) * scale, (-sign / total - ratio) * scale


def geometric_consistency_loss(
    proj_ab: ProjectionMap,
    proj_ba: ProjectionMap,
    depth_a: np.ndarray,
    depth_b: np.ndarray,
    masks: Sequence[np.ndarray],
) -> float:
    mask_a, mask_b = masks
    value_a, _ = _gc_view(proj_ab, depth_b, mask_a)
    value_b, _ = _gc_view(proj_ba, depth_a, mask_b)
    return value_a + value_b


# --- total objective ---


@dataclass
class Evaluation:
    breakdown: LossBreakdown
    gradients: Optional[tuple[np.ndarray, np.ndarray]]
    alphas: list[tuple[np.ndarray, np.ndarray]]
    # floor of every projected coordinate, the masks and the sign under every
    # absolute value, per level and direction; the loss is smooth while it is fixed
    lattice: list[np.ndarray] = field(default_factory=list, repr=False)


def check_pyramid(shape: tuple[int, int], num_scales: int) -> None:
    height, width = shape
    factor = 2 ** (num_scales - 1)
    if height % factor or width % factor:
        raise InvalidInputError(f"{height}x{width} raster is not divisible by {factor} for {num_scales} scales")
    if height // factor < 3 or width // factor < 3:
        raise InvalidInputError(
            f"{num_scales} scales shrink {height}x{width} below 3x3 (Sobel minimum); use fewer scales"
        )


def _kink_signs(
    image: np.ndarray,
    reconstructed: np.ndarray,
    mask: np.ndarray,
    relative: np.ndarray,
    projected: np.ndarray,
    sampled: np.ndarray,
) -> list[np.ndarray]:
    dx, dy = sobel_gradients(relative)
    return [
        np.sign(reconstructed - image) * mask[..., None],
        np.sign(dx),
        np.sign(dy),
        np.sign(projected - sampled) * mask,
    ]


def _pyramid(grid: np.ndarray, levels: int) -> list[np.ndarray]:
    out = [grid]
    for _ in range(1, levels):
        out.append(downsample2x(out[-1]))
    return out


def _evaluate_level(
    level: int,
    images: tuple[np.ndarray, np.ndarray],
    fields: tuple[np.ndarray, np.ndarray],
    intrinsics: tuple[CameraIntrinsics, CameraIntrinsics],
    poses: tuple[RigidPose, RigidPose],
    mus: tuple[float, float],
    weights: LossWeights,
    frozen_alphas: Optional[tuple[np.ndarray, np.ndarray]],
    with_gradient: bool,
):
    img1, img2 = images
    rel1, rel2 = fields
    k1, k2 = intrinsics
    pose_12, pose_21 = poses
    d1 = scale_transform(rel1, mus[0])
    d2 = scale_transform(rel2, mus[1])
    proj12 = project_pixels(d1, k1, k2, pose_12)
    proj21 = project_pixels(d2, k2, k1, pose_21)
    rec1, m1 = bilinear_sample(img2, proj12)
    rec2, m2 = bilinear_sample(img1, proj21)

    try:
        ph1, res1 = photometric_loss(img1, rec1, m1)
        ph2, res2 = photometric_loss(img2, rec2, m2)
    except NoOverlapError as e:
        raise NoOverlapError(str(e), scale=level) from None
    ss1 = _ssim_view(img1, rec1, m1)
    ss2 = _ssim_view(img2, rec2, m2)
    if frozen_alphas is None:
        alpha1 = adaptive_weights(res1, weights.c, weights.sigma_mode)
        alpha2 = adaptive_weights(res2, weights.c, weights.sigma_mode)
    else:
        alpha1, alpha2 = frozen_alphas
    sm1 = smoothness_loss(rel1, img1, alpha1)
    sm2 = smoothness_loss(rel2, img2, alpha2)
    gc1, samp1 = _gc_view(proj12, d2, m1)
    gc2, samp2 = _gc_view(proj21, d1, m2)

    terms = ScaleTerms(
        level=level,
        photometric=(ph1, ph2),
        geometric=(gc1, gc2),
        ssim=(ss1, ss2),
        smoothness=(sm1, sm2),
        valid_counts=(int(m1.sum()), int(m2.sum())),
    )
    lattice = [np.floor(proj12.coords).astype(np.int64), m1, np.floor(proj21.coords).astype(np.int64), m2]
    lattice += _kink_signs(img1, rec1, m1, rel1, proj12.projected_depth, samp1)
    lattice += _kink_signs(img2, rec2, m2, rel2, proj21.projected_depth, samp2)
    if not with_gradient:
        return terms, None, (alpha1, alpha2), lattice

    w = weights
    # view 1 reconstructed from view 2 through proj12, and vice versa
    g_rec1 = w.lambda_ph * photometric_loss_grad(img1, rec1, m1) + w.lambda_ssim * _ssim_view_grad(img1, rec1, m1)
    g_rec2 = w.lambda_ph * photometric_loss_grad(img2, rec2, m2) + w.lambda_ssim * _ssim_view_grad(img2, rec2, m2)
    g_q1, g_s1 = _gc_view_grads(proj12, samp1, m1)
    g_q2, g_s2 = _gc_view_grads(proj21, samp2, m2)

    _, g_coords1 = bilinear_sample_grad(img2, proj12, g_rec1)
    g_d2_from_1, g_coords1_gc = bilinear_sample_grad(d2, proj12, w.lambda_gc * g_s1)
    _, g_coords2 = bilinear_sample_grad(img1, proj21, g_rec2)
    g_d1_from_2, g_coords2_gc = bilinear_sample_grad(d1, proj21, w.lambda_gc * g_s2)

    g_d1 = ((g_coords1 + g_coords1_gc) * proj12.d_coords).sum(axis=-1) + w.lambda_gc * g_q1 * proj12.d_depth
    g_d2 = ((g_coords2 + g_coords2_gc) * proj21.d_coords).sum(axis=-1) + w.lambda_gc * g_q2 * proj21.d_depth
    g_d1 = g_d1 + g_d1_from_2
    g_d2 = g_d2 + g_d2_from_1

    w_smooth = w.smooth_weight(level)
    # d(mu e^x)/dx = mu e^x
    g_rel1 = g_d1 * d1 + w_smooth * smoothness_loss_grad(rel1, img1, alpha1)
    g_rel2 = g_d2 * d2 + w_smooth * smoothness_loss_grad(rel2, img2, alpha2)
    return terms, (g_rel1, g_rel2), (alpha1, alpha2), lattice


def evaluate(
    pair: ScenePair,
    rel_field_1: np.ndarray,
    rel_field_2: np.ndarray,
    weights: LossWeights,
    frozen_alphas: Optional[list[tuple[np.ndarray, np.ndarray]]] = None,
    with_gradient: bool = True,
) -> Evaluation:
    """Multi-scale objective, optionally with gradients and with externally fixed adaptive weights."""
    rel1 = check_grid(rel_field_1, "rel_field_1")
    rel2 = check_grid(rel_field_2, "rel_field_2")
    if rel1.shape != pair.shape or rel2.shape != pair.shape:
        raise InvalidInputError(f"Fields {rel1.shape}, {rel2.shape} do not match the {pair.shape} views")
    levels = weights.num_scales
    check_pyramid(pair.shape, levels)

    images1, images2 = _pyramid(pair.image1, levels), _pyramid(pair.image2, levels)
    fields1, fields2 = _pyramid(rel1, levels), _pyramid(rel2, levels)
    poses = (pair.pose_12, pair.pose_21)
    mus = (pair.mu1.value, pair.mu2.value) if weights.scale_transform else (1.0, 1.0)
    k1, k2 = pair.k1, pair.k2

    scales, alphas, lattice = [], [], []
    grad1 = np.zeros_like(rel1)
    grad2 = np.zeros_like(rel2)
    for level in range(levels):
        frozen = None if frozen_alphas is None else frozen_alphas[level]
        terms, grads, level_alphas, level_lattice = _evaluate_level(
            level,
            (images1[level], images2[level]),
            (fields1[level], fields2[level]),
            (k1, k2),
            poses,
            mus,
            weights,
            frozen,
            with_gradient,
        )
        scales.append(terms)
        alphas.append(level_alphas)
        lattice.extend(level_lattice)
        if grads is not None:
            g1, g2 = grads
            for _ in range(level):
                g1 = downsample2x_adjoint(g1)
                g2 = downsample2x_adjoint(g2)
            grad1 += g1
            grad2 += g2
        k1, k2 = k1.downscaled(), k2.downscaled()

    breakdown = LossBreakdown(scales=scales, weights=weights, total=0.0)
    breakdown.total = breakdown.weighted_total()
    return Evaluation(breakdown, (grad1, grad2) if with_gradient else None, alphas, lattice)


def total_loss(
    pair: ScenePair, rel_field_1: np.ndarray, rel_field_2: np.ndarray, weights: LossWeights
) -> LossBreakdown:
    return evaluate(pair, rel_field_1, rel_field_2, weights, with_gradient=False).breakdown


def total_loss_gradient(
    pair: ScenePair, rel_field_1: np.ndarray, rel_field_2: np.ndarray, weights: LossWeights
) -> tuple[np.ndarray, np.ndarray]:
    gradients = evaluate(pair, rel_field_1, rel_field_2, weights).gradients
    assert gradients is not None
    return gradients


def fields_from_depth(pair: ScenePair, depth1: np.ndarray, depth2: np.ndarray, weights: Union[LossWeights, None] = None):
    """Relative fields log(D / mu) that reproduce the given depth maps."""
    use_mu = weights is None or weights.scale_transform
    mu1 = pair.mu1.value if use_mu else 1.0
    mu2 = pair.mu2.value if use_mu else 1.0
    return np.log(np.asarray(depth1) / mu1), np.log(np.asarray(depth2) / mu2)
