import numpy as np
import pytest

from errors import InvalidInputError
from geometry import ProjectionMap
from imaging import (
    SSIM_C1,
    SSIM_C2,
    bilinear_sample,
    bilinear_sample_grad,
    downsample2x,
    downsample2x_adjoint,
    sobel_gradients,
    sobel_gradients_adjoint,
    ssim_map,
    ssim_map_grad,
)


def _proj(coords, in_front=None) -> ProjectionMap:
    coords = np.asarray(coords, dtype=np.float64)
    if in_front is None:
        in_front = np.ones(coords.shape[:2], dtype=bool)
    return ProjectionMap(coords, np.ones(coords.shape[:2]), in_front)


def _ssim_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct per-pixel SSIM from explicitly gathered 3x3 edge-replicated patches."""
    height, width = a.shape
    pa, pb = np.pad(a, 1, mode="edge"), np.pad(b, 1, mode="edge")
    out = np.zeros_like(a)
    for r in range(height):
        for c in range(width):
            x = pa[r : r + 3, c : c + 3].ravel()
            y = pb[r : r + 3, c : c + 3].ravel()
            mx, my = x.mean(), y.mean()
            vx, vy = ((x - mx) ** 2).mean(), ((y - my) ** 2).mean()
            cov = ((x - mx) * (y - my)).mean()
            out[r, c] = ((2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2)) / (
                (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
            )
    return out


class TestBilinearSample:
    def test_integer_coordinate_is_exact(self, rng):
        source = rng.uniform(size=(4, 5))
        sampled, mask = bilinear_sample(source, _proj(np.full((1, 1, 2), [3.0, 2.0])))
        assert sampled[0, 0] == source[2, 3]
        assert mask[0, 0] == 1.0

    def test_centre_of_2x2(self):
        source = np.array([[0.0, 1.0], [2.0, 3.0]])
        sampled, mask = bilinear_sample(source, _proj(np.full((1, 1, 2), 0.5)))
        assert sampled[0, 0] == pytest.approx(1.5)
        assert mask[0, 0] == 1.0

    def test_out_of_bounds_is_masked(self):
        source = np.ones((3, 3))
        sampled, mask = bilinear_sample(source, _proj(np.full((1, 1, 2), [-0.1, 0.0])))
        assert sampled[0, 0] == 0.0
        assert mask[0, 0] == 0.0

    def test_behind_camera_is_masked(self):
        source = np.ones((3, 3))
        proj = _proj(np.full((1, 1, 2), 1.0), in_front=np.zeros((1, 1), dtype=bool))
        sampled, mask = bilinear_sample(source, proj)
        assert sampled[0, 0] == 0.0 and mask[0, 0] == 0.0

    def test_far_edges_are_inside(self):
        source = np.arange(12.0).reshape(3, 4)
        sampled, mask = bilinear_sample(source, _proj(np.full((1, 1, 2), [3.0, 2.0])))
        assert sampled[0, 0] == 11.0 and mask[0, 0] == 1.0

    def test_rounding_at_the_bounds_stays_inside(self):
        source = np.arange(12.0).reshape(3, 4)
        coords = np.array([[[-1e-15, 1.0], [3.0 + 1e-13, 2.0], [2.0, -1e-12]]])
        sampled, mask = bilinear_sample(source, _proj(coords))
        np.testing.assert_array_equal(mask, 1.0)
        np.testing.assert_array_equal(sampled, [[4.0, 11.0, 2.0]])

    def test_beyond_tolerance_is_masked(self):
        sampled, mask = bilinear_sample(np.ones((3, 3)), _proj(np.full((1, 1, 2), [-1e-6, 1.0])))
        assert mask[0, 0] == 0.0 and sampled[0, 0] == 0.0

    def test_value_within_corner_range(self, rng):
        source = rng.uniform(size=(6, 6))
        coords = rng.uniform(0, 5, size=(10, 10, 2))
        sampled, mask = bilinear_sample(source, _proj(coords))
        assert mask.all()
        x0, y0 = np.floor(coords[..., 0]).astype(int), np.floor(coords[..., 1]).astype(int)
        corners = np.stack(
            [source[y0, x0], source[y0, x0 + 1], source[y0 + 1, x0], source[y0 + 1, x0 + 1]], axis=-1
        )
        assert np.all(sampled >= corners.min(axis=-1) - 1e-12)
        assert np.all(sampled <= corners.max(axis=-1) + 1e-12)

    def test_multichannel_matches_per_channel(self, rng):
        source = rng.uniform(size=(5, 6, 3))
        proj = _proj(rng.uniform(0, 4, size=(3, 4, 2)))
        sampled, _ = bilinear_sample(source, proj)
        for c in range(3):
            np.testing.assert_array_equal(sampled[..., c], bilinear_sample(source[..., c], proj)[0])

    def test_gradients_match_finite_differences(self, rng):
        source = rng.uniform(size=(6, 7, 3))
        coords = rng.uniform(0.2, 5.0, size=(4, 5, 2))
        # keep away from lattice lines
        frac = coords - np.floor(coords)
        coords = np.floor(coords) + np.clip(frac, 0.01, 0.99)
        proj = _proj(coords)
        weights = rng.normal(size=(4, 5, 3))
        grad_source, grad_coords = bilinear_sample_grad(source, proj, weights)

        step = 1e-5
        for axis in (0, 1):
            plus, minus = coords.copy(), coords.copy()
            plus[..., axis] += step
            minus[..., axis] -= step
            numeric = (
                (bilinear_sample(source, _proj(plus))[0] * weights).sum(axis=-1)
                - (bilinear_sample(source, _proj(minus))[0] * weights).sum(axis=-1)
            ) / (2 * step)
            np.testing.assert_allclose(grad_coords[..., axis], numeric, rtol=1e-6, atol=1e-9)

        # sampling is linear in the source, so the adjoint identity holds exactly
        probe = rng.normal(size=source.shape)
        lhs = (bilinear_sample(probe, proj)[0] * weights).sum()
        assert (grad_source * probe).sum() == pytest.approx(lhs, rel=1e-12)


class TestSobel:
    def test_constant_grid(self):
        gx, gy = sobel_gradients(np.full((5, 6), 3.0))
        np.testing.assert_array_equal(gx, 0.0)
        np.testing.assert_array_equal(gy, 0.0)

    def test_horizontal_ramp(self):
        grid = np.tile(np.arange(7.0), (5, 1))
        gx, gy = sobel_gradients(grid)
        np.testing.assert_allclose(gx[:, 1:-1], 8.0)
        np.testing.assert_allclose(gx[:, [0, -1]], 4.0)
        np.testing.assert_allclose(gy, 0.0)

    def test_transpose_swaps_components(self, rng):
        grid = rng.normal(size=(5, 7))
        gx, gy = sobel_gradients(grid)
        tx, ty = sobel_gradients(grid.T)
        np.testing.assert_allclose(tx, gy.T, atol=1e-12)
        np.testing.assert_allclose(ty, gx.T, atol=1e-12)

    def test_too_small(self):
        with pytest.raises(InvalidInputError):
            sobel_gradients(np.zeros((2, 5)))

    def test_adjoint_identity(self, rng):
        x = rng.normal(size=(6, 5))
        ax, ay = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
        gx, gy = sobel_gradients(x)
        lhs = (gx * ax).sum() + (gy * ay).sum()
        assert (sobel_gradients_adjoint(ax, ay) * x).sum() == pytest.approx(lhs, rel=1e-12)


class TestDownsample:
    def test_block_mean(self):
        assert downsample2x(np.array([[0.0, 1.0], [2.0, 3.0]]))[0, 0] == 1.5

    def test_constant_preserved_twice(self):
        out = downsample2x(downsample2x(np.full((8, 8), 0.7)))
        assert out.shape == (2, 2)
        np.testing.assert_array_equal(out, 0.7)

    def test_multichannel(self, rng):
        image = rng.uniform(size=(4, 6, 3))
        out = downsample2x(image)
        assert out.shape == (2, 3, 3)
        assert out[1, 2, 1] == pytest.approx(image[2:4, 4:6, 1].mean())

    def test_odd_dimension_rejected(self):
        with pytest.raises(InvalidInputError):
            downsample2x(np.zeros((3, 4)))

    def test_adjoint_identity(self, rng):
        x, y = rng.normal(size=(6, 8)), rng.normal(size=(3, 4))
        assert (downsample2x(x) * y).sum() == pytest.approx((x * downsample2x_adjoint(y)).sum(), rel=1e-12)


class TestSSIM:
    def test_identical_images(self, rng):
        a = rng.uniform(size=(6, 6, 3))
        np.testing.assert_allclose(ssim_map(a, a), 1.0, atol=1e-12)

    def test_constant_patches(self):
        out = ssim_map(np.zeros((4, 4, 1)), np.ones((4, 4, 1)))
        np.testing.assert_allclose(out, SSIM_C1 / (1 + SSIM_C1), rtol=1e-9)

    def test_symmetry(self, rng):
        a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
        np.testing.assert_allclose(ssim_map(a, b), ssim_map(b, a), atol=1e-15)

    def test_matches_definition(self, rng):
        a, b = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
        np.testing.assert_allclose(ssim_map(a, b), _ssim_oracle(a, b), atol=1e-12)

    def test_range(self, rng):
        a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
        out = ssim_map(a, b)
        assert np.all(out >= -1.0) and np.all(out <= 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            ssim_map(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))

    def test_gradient_matches_finite_differences(self, rng):
        a, b = rng.uniform(size=(6, 7, 3)), rng.uniform(size=(6, 7, 3))
        weights = rng.normal(size=(6, 7))
        grad = ssim_map_grad(a, b, weights)
        step = 1e-6
        for index in [(0, 0, 0), (2, 3, 1), (5, 6, 2), (3, 0, 0)]:
            plus, minus = b.copy(), b.copy()
            plus[index] += step
            minus[index] -= step
            numeric = ((ssim_map(a, plus) - ssim_map(a, minus)) * weights).sum() / (2 * step)
            assert grad[index] == pytest.approx(numeric, rel=1e-5, abs=1e-7)
