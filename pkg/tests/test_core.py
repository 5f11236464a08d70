import unittest

import numpy as np

from support import IDENTITY_LIGHTS, context_for, scene_case, sphere_cap_slope

from ipiano_ps.config import DEFAULT_LIGHT_ELEVATION_DEG, SCENE_MAX_TILT_DEG
from ipiano_ps.errors import GridMismatchError, InputError, LightingError, SceneError
from ipiano_ps.services.core import (
    AlbedoMap,
    DepthMap,
    Grid,
    ImageStack,
    LightMatrix,
    NormalField,
    add_gaussian_noise,
    build_gradient_operator,
    gaussian_amplitude_default,
    make_scene,
    mean_angular_error,
    normals_from_depth,
    render_lambertian,
    reprojection_error_map,
    ring_lights,
    sphere_cap_radius_default,
)
from ipiano_ps.services.energy import eval_f


def smooth_depth(grid, seed=0):
    rng = np.random.default_rng(seed)
    rows, cols = np.indices(grid.shape, dtype=float)
    coefficients = rng.uniform(-0.2, 0.2, size=4)
    z = (
        coefficients[0] * np.sin(0.5 * cols)
        + coefficients[1] * np.cos(0.4 * rows)
        + coefficients[2] * cols
        + coefficients[3] * rows * cols / max(grid.n, 1)
    )
    return DepthMap(grid, z.reshape(-1))


class GridTest(unittest.TestCase):
    def test_rejects_empty_grid(self):
        with self.assertRaises(InputError):
            Grid(0, 3)

    def test_to_image_and_flatten_are_row_major(self):
        grid = Grid(3, 2)
        values = np.arange(6)
        image = grid.to_image(values)
        self.assertEqual(image.shape, (2, 3))
        self.assertEqual(image[1, 0], 3)
        np.testing.assert_array_equal(grid.flatten(image), values)

    def test_mismatched_arrays_are_rejected(self):
        grid = Grid(2, 2)
        with self.assertRaises(GridMismatchError):
            DepthMap(grid, np.zeros(5))
        with self.assertRaises(GridMismatchError):
            Grid(2, 2).require_same(Grid(3, 2))


class ValueTypeTest(unittest.TestCase):
    def test_image_stack_needs_three_images(self):
        with self.assertRaises(InputError):
            ImageStack(Grid(2, 2), np.zeros((2, 4)))

    def test_image_stack_rejects_non_finite_values(self):
        values = np.zeros((3, 4))
        values[0, 0] = np.nan
        with self.assertRaises(InputError):
            ImageStack(Grid(2, 2), values)

    def test_coplanar_lights_are_rejected(self):
        coplanar = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]])
        with self.assertRaises(LightingError):
            LightMatrix(coplanar)

    def test_light_matrix_split(self):
        lights = ring_lights(5)
        np.testing.assert_array_equal(
            np.column_stack((lights.left, lights.right)), lights.S
        )

    def test_normal_field_requires_unit_rows(self):
        with self.assertRaises(InputError):
            NormalField(Grid(1, 1), np.array([[0.0, 0.0, 2.0]]))

    def test_values_are_read_only(self):
        depth = DepthMap(Grid(2, 1), np.array([1.0, 2.0]))
        with self.assertRaises(ValueError):
            depth.z[0] = 5.0

    def test_albedo_out_of_range_counts(self):
        albedo = AlbedoMap(Grid(3, 1), np.array([-0.1, 0.5, 1.2]))
        self.assertEqual(albedo.out_of_range(), 2)


class GradientOperatorTest(unittest.TestCase):
    def test_single_pixel_operator_is_zero(self):
        operator = build_gradient_operator(Grid(1, 1))
        self.assertEqual(operator.matrix.shape, (2, 1))
        self.assertEqual(operator.matrix.count_nonzero(), 0)

    def test_constant_depth_has_zero_gradient(self):
        operator = build_gradient_operator(Grid(4, 4))
        self.assertEqual(np.max(np.abs(operator.matrix @ np.full(16, 3.7))), 0.0)

    def test_horizontal_ramp(self):
        grid = Grid(3, 3)
        operator = build_gradient_operator(grid)
        u = np.tile(np.arange(3.0), 3)
        gradients = grid.to_image(operator.apply(u))
        np.testing.assert_array_equal(gradients[:, :2, 0], np.ones((3, 2)))
        np.testing.assert_array_equal(gradients[:, 2, 0], np.zeros(3))
        np.testing.assert_array_equal(gradients[..., 1], np.zeros((3, 3)))

    def test_interleaved_rows_match_per_pixel_blocks(self):
        grid = Grid(5, 4)
        operator = build_gradient_operator(grid)
        z = np.random.default_rng(1).standard_normal(grid.n)
        np.testing.assert_allclose(
            (operator.matrix @ z).reshape(grid.n, 2), operator.apply(z), atol=1e-15
        )
        columns, blocks = operator.stencil
        local = np.einsum("jtc,jc->jt", blocks, z[columns])
        np.testing.assert_allclose(local, operator.apply(z), atol=1e-15)

    def test_block_sparsity_and_norm_bound(self):
        grid = Grid(7, 6)
        operator = build_gradient_operator(grid)
        matrix = operator.matrix.tocsr()
        for j in range(grid.n):
            block = matrix[2 * j : 2 * j + 2]
            self.assertLessEqual(block.count_nonzero(), 4)
        self.assertLessEqual(operator.norm, np.sqrt(8.0) + 1e-9)
        self.assertGreater(operator.norm, 2.0)

    def test_block_norms(self):
        grid = Grid(3, 3)
        norms = grid.to_image(build_gradient_operator(grid).block_norms)
        self.assertAlmostEqual(norms[0, 0], np.sqrt(3.0), places=12)
        self.assertAlmostEqual(norms[0, 2], np.sqrt(2.0), places=12)
        self.assertAlmostEqual(norms[2, 2], 0.0, places=12)

    def test_adjoint_matches_transpose(self):
        grid = Grid(4, 3)
        operator = build_gradient_operator(grid)
        per_pixel = np.random.default_rng(2).standard_normal((grid.n, 2))
        np.testing.assert_allclose(
            operator.adjoint(per_pixel), operator.matrix.T @ per_pixel.reshape(-1), atol=1e-14
        )


class NormalsAndRenderingTest(unittest.TestCase):
    def test_constant_depth_faces_viewer(self):
        grid = Grid(3, 3)
        normals = normals_from_depth(DepthMap(grid, np.ones(9)), build_gradient_operator(grid))
        np.testing.assert_array_equal(normals.normals, np.tile([0.0, 0.0, 1.0], (9, 1)))
        self.assertTrue(normals.facing_viewer())

    def test_unit_slope_normal(self):
        grid = Grid(2, 1)
        normals = normals_from_depth(DepthMap(grid, np.array([0.0, 1.0])), build_gradient_operator(grid))
        np.testing.assert_allclose(normals.normals[0], np.array([-1.0, 0.0, 1.0]) / np.sqrt(2.0))

    def test_random_smooth_depth_gives_unit_normals(self):
        grid = Grid(9, 7)
        normals = normals_from_depth(smooth_depth(grid), build_gradient_operator(grid))
        np.testing.assert_allclose(np.linalg.norm(normals.normals, axis=1), 1.0, atol=1e-14)

    def test_identity_lights_render_normal_components(self):
        grid = Grid(6, 5)
        operator = build_gradient_operator(grid)
        depth = smooth_depth(grid, seed=3)
        images = render_lambertian(depth, AlbedoMap(grid, np.ones(grid.n)), IDENTITY_LIGHTS, operator)
        np.testing.assert_allclose(
            images.intensities.T, normals_from_depth(depth, operator).normals, atol=1e-15
        )

    def test_frontal_and_grazing_light_on_plane(self):
        grid = Grid(3, 3)
        images = render_lambertian(
            DepthMap(grid, np.zeros(9)),
            AlbedoMap(grid, np.ones(9)),
            IDENTITY_LIGHTS,
            build_gradient_operator(grid),
        )
        np.testing.assert_array_equal(images.intensities[0], np.zeros(9))
        np.testing.assert_array_equal(images.intensities[2], np.ones(9))

    def test_sphere_render_matches_scalar_evaluation(self):
        grid = Grid(6, 6)
        operator = build_gradient_operator(grid)
        depth, albedo = make_scene("sphere-cap", grid)
        lights = ring_lights(4, 50.0)
        images = render_lambertian(depth, albedo, lights, operator)
        z = grid.to_image(depth.z)
        for row in range(grid.height):
            for col in range(grid.width):
                du = z[row, col + 1] - z[row, col] if col + 1 < grid.width else 0.0
                dv = z[row + 1, col] - z[row, col] if row + 1 < grid.height else 0.0
                denominator = np.sqrt(du * du + dv * dv + 1.0)
                j = row * grid.width + col
                for i in range(lights.m):
                    sx, sy, sz = lights.S[i]
                    expected = albedo.rho[j] * (-sx * du - sy * dv + sz) / denominator
                    self.assertAlmostEqual(images.intensities[i, j], expected, places=14)

    def test_clamp_only_when_requested(self):
        case = scene_case("sphere-cap", size=8, m=4)
        lights = LightMatrix(np.array([[1.0, 0.0, 0.1], [0.0, 1.0, 0.1], [-1.0, -1.0, 0.1]]))
        raw = render_lambertian(case.depth, case.albedo, lights, case.operator)
        clamped = render_lambertian(case.depth, case.albedo, lights, case.operator, clamp=True)
        self.assertLess(np.min(raw.intensities), 0.0)
        self.assertGreaterEqual(np.min(clamped.intensities), 0.0)


class NoiseTest(unittest.TestCase):
    def setUp(self):
        self.images = scene_case("sphere-cap", size=16, m=4).clean

    def test_zero_sigma_is_identity(self):
        noisy = add_gaussian_noise(self.images, 0.0, seed=5)
        np.testing.assert_array_equal(noisy.intensities, self.images.intensities)

    def test_same_seed_same_output(self):
        first = add_gaussian_noise(self.images, 0.05, seed=9)
        second = add_gaussian_noise(self.images, 0.05, seed=9)
        np.testing.assert_array_equal(first.intensities, second.intensities)

    def test_negative_sigma_is_rejected(self):
        with self.assertRaises(InputError):
            add_gaussian_noise(self.images, -0.1, seed=0)

    def test_noise_level_is_relative_to_maximum(self):
        grid = Grid(200, 200)
        images = ImageStack(grid, np.full((3, grid.n), 0.5))
        noisy = add_gaussian_noise(images, 0.1, seed=0)
        std = float(np.std(noisy.intensities - images.intensities))
        self.assertLess(abs(std - 0.05) / 0.05, 0.02)


class MetricsTest(unittest.TestCase):
    def test_identical_fields_have_zero_error(self):
        case = scene_case("sphere-cap", size=8)
        self.assertEqual(mean_angular_error(case.normals, case.normals), 0.0)

    def test_orthogonal_fields(self):
        grid = Grid(2, 2)
        frontal = NormalField(grid, np.tile([0.0, 0.0, 1.0], (4, 1)))
        sideways = NormalField(grid, np.tile([1.0, 0.0, 0.0], (4, 1)))
        self.assertAlmostEqual(mean_angular_error(frontal, sideways), 90.0, places=12)

    def test_mean_over_pixels_and_mask(self):
        grid = Grid(2, 1)
        angle = np.deg2rad(10.0)
        tilted = [np.sin(angle), 0.0, np.cos(angle)]
        estimate = NormalField(grid, np.array([[0.0, 0.0, 1.0], tilted]))
        truth = NormalField(grid, np.tile([0.0, 0.0, 1.0], (2, 1)))
        self.assertAlmostEqual(mean_angular_error(estimate, truth), 5.0, places=12)
        self.assertAlmostEqual(
            mean_angular_error(estimate, truth, mask=np.array([0, 1])), 10.0, places=12
        )

    def test_reprojection_error_vanishes_at_truth(self):
        case = scene_case("gaussian-bump", size=8, m=5)
        errors = reprojection_error_map(case.depth, case.albedo, case.clean, case.lights, case.operator)
        self.assertLess(np.max(errors), 1e-28)

    def test_reprojection_error_sums_to_energy(self):
        case = scene_case("gaussian-bump", size=8, m=5, noise=0.05, seed=4)
        rng = np.random.default_rng(4)
        depth = DepthMap(case.grid, case.depth.z + 0.1 * rng.standard_normal(case.grid.n))
        albedo = AlbedoMap(case.grid, rng.uniform(0.2, 1.0, case.grid.n))
        errors = reprojection_error_map(depth, albedo, case.images, case.lights, case.operator)
        energy = eval_f(context_for(case, albedo=albedo), depth.z)
        self.assertAlmostEqual(float(np.sum(errors)) / energy, 1.0, delta=1e-12)

    def test_single_corrupted_pixel(self):
        case = scene_case("plane", size=4, m=3)
        intensities = np.array(case.clean.intensities)
        intensities[1, 6] += 0.3
        corrupted = ImageStack(case.grid, intensities)
        errors = reprojection_error_map(case.depth, case.albedo, corrupted, case.lights, case.operator)
        self.assertAlmostEqual(errors[6], 0.09 / 6.0, places=15)
        self.assertEqual(np.count_nonzero(errors > 1e-20), 1)


class SceneTest(unittest.TestCase):
    def test_plane_scene(self):
        grid = Grid(5, 4)
        depth, albedo = make_scene("plane", grid, {"offset": 2.0})
        np.testing.assert_array_equal(depth.z, np.full(grid.n, 2.0))
        normals = normals_from_depth(depth, build_gradient_operator(grid))
        np.testing.assert_array_equal(normals.normals[:, 2], np.ones(grid.n))
        np.testing.assert_array_equal(albedo.rho, np.full(grid.n, 0.8))

    def test_flat_gaussian_bump_is_plane(self):
        depth, _ = make_scene("gaussian-bump", Grid(6, 6), {"amplitude": 0.0})
        np.testing.assert_array_equal(depth.z, np.zeros(36))

    def test_sphere_cap_slope_is_bounded_by_the_analytic_slope(self):
        grid = Grid(16, 16)
        radius = sphere_cap_radius_default(grid)
        depth, _ = make_scene("sphere-cap", grid, {"radius": radius})
        slopes = np.linalg.norm(build_gradient_operator(grid).apply(depth.z), axis=1)
        reach = np.hypot(8.5, 8.5)
        bound = sphere_cap_slope(radius, reach)
        self.assertLessEqual(np.max(slopes), bound)
        self.assertGreater(np.max(slopes), 0.5 * bound)

    def test_default_scenes_stay_below_the_light_elevation(self):
        grid = Grid(32, 32)
        limit = np.tan(np.deg2rad(SCENE_MAX_TILT_DEG))
        radius = sphere_cap_radius_default(grid)
        self.assertAlmostEqual(sphere_cap_slope(radius, np.hypot(16.5, 16.5)), limit, places=12)
        sigma = 8.0
        amplitude = gaussian_amplitude_default(sigma)
        self.assertAlmostEqual(amplitude / sigma * np.exp(-0.5), limit, places=12)
        self.assertLess(SCENE_MAX_TILT_DEG, DEFAULT_LIGHT_ELEVATION_DEG)
        for kind in ("sphere-cap", "gaussian-bump"):
            with self.subTest(kind=kind):
                depth, albedo = make_scene(kind, grid)
                operator = build_gradient_operator(grid)
                images = render_lambertian(depth, albedo, ring_lights(8), operator)
                self.assertGreater(np.min(images.intensities), 0.0)

    def test_two_tone_albedo(self):
        _, albedo = make_scene("plane", Grid(4, 2), {"albedo": 0.4, "albedo_secondary": 0.9})
        np.testing.assert_array_equal(
            Grid(4, 2).to_image(albedo.rho), [[0.4, 0.4, 0.9, 0.9], [0.4, 0.4, 0.9, 0.9]]
        )

    def test_invalid_scenes(self):
        grid = Grid(8, 8)
        with self.assertRaises(SceneError):
            make_scene("cube", grid)
        with self.assertRaises(SceneError):
            make_scene("plane", grid, {"colour": 1})
        with self.assertRaises(SceneError):
            make_scene("sphere-cap", grid, {"radius": 3.0})
        with self.assertRaises(SceneError):
            make_scene("gaussian-bump", grid, {"sigma": 0.0})

    def test_ring_lights(self):
        lights = ring_lights(6, 30.0)
        np.testing.assert_allclose(np.linalg.norm(lights.S, axis=1), 1.0, atol=1e-15)
        np.testing.assert_allclose(lights.right, np.full(6, 0.5), atol=1e-15)
        with self.assertRaises(LightingError):
            ring_lights(2)


if __name__ == "__main__":
    unittest.main()
