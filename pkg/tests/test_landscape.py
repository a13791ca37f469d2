"""Direction normalization, surface scanning, and the flatness metric."""

import numpy as np
import pytest

from takd.data import gen_synthetic
from takd.distill import DistillConfig
from takd.errors import ParameterError
from takd.landscape import (LossSurface, dataset_loss, flatness_metric,
                            filter_normalized_directions, loss_surface,
                            read_surface_csv, write_surface_csv)
from takd.models import build_model, cnn_spec, mlp_spec


@pytest.fixture(scope="module")
def toy_model():
    return build_model(mlp_spec(2, input_dim=2, width=8, num_classes=3), seed=4)


@pytest.fixture(scope="module")
def toy_data():
    return gen_synthetic("blobs", 120, 3, 0.1, seed=2)


class TestDirections:
    def test_per_filter_norms_match_model(self, toy_model):
        delta, eta = filter_normalized_directions(toy_model, seed=0)
        for p in toy_model.parameters:
            if not p.name.endswith(".weight"):
                assert not delta[p.name].value.any()
                continue
            d = delta[p.name].value
            for row_w, row_d in zip(p.value, d):
                assert np.linalg.norm(row_d) == pytest.approx(
                    np.linalg.norm(row_w.astype(np.float64)), abs=1e-6)

    def test_conv_filters_normalized_per_output_channel(self):
        model = build_model(cnn_spec(2, input_shape=(1, 6, 6),
                                     base_channels=3, num_classes=3), seed=1)
        delta, _ = filter_normalized_directions(model, seed=5)
        for p in model.parameters:
            if p.name.endswith(".weight") and p.value.ndim == 4:
                for w_f, d_f in zip(p.value, delta[p.name].value):
                    assert np.linalg.norm(d_f) == pytest.approx(
                        np.linalg.norm(w_f.astype(np.float64)), abs=1e-6)

    def test_zero_filter_guard(self, toy_model):
        model = build_model(mlp_spec(1, input_dim=2, width=4, num_classes=2),
                            seed=0)
        model.parameters["layer0.weight"].value[1, :] = 0.0
        delta, eta = filter_normalized_directions(model, seed=3)
        assert not delta["layer0.weight"].value[1].any()
        assert not eta["layer0.weight"].value[1].any()
        assert np.isfinite(delta["layer0.weight"].value).all()

    def test_deterministic(self, toy_model):
        d1, e1 = filter_normalized_directions(toy_model, seed=9)
        d2, e2 = filter_normalized_directions(toy_model, seed=9)
        for a, b in ((d1, d2), (e1, e2)):
            for p, q in zip(a, b):
                assert np.array_equal(p.value, q.value)

    def test_two_directions_differ(self, toy_model):
        delta, eta = filter_normalized_directions(toy_model, seed=9)
        assert not np.array_equal(delta["layer0.weight"].value,
                                  eta["layer0.weight"].value)


class TestSurface:
    def test_center_equals_model_loss_exactly(self, toy_model, toy_data):
        delta, eta = filter_normalized_directions(toy_model, seed=0)
        surf = loss_surface(toy_model, toy_data, delta, eta, radius=0.5,
                            steps=5)
        direct = dataset_loss(toy_model, toy_data.x_test, toy_data.y_test)
        assert surf.center_loss == direct
        assert surf.grid[2, 2] == direct

    def test_zero_radius_constant_grid(self, toy_model, toy_data):
        delta, eta = filter_normalized_directions(toy_model, seed=0)
        surf = loss_surface(toy_model, toy_data, delta, eta, radius=0.0,
                            steps=3)
        assert np.all(surf.grid == surf.grid[0, 0])

    def test_even_steps_rejected(self, toy_model, toy_data):
        delta, eta = filter_normalized_directions(toy_model, seed=0)
        with pytest.raises(ParameterError):
            loss_surface(toy_model, toy_data, delta, eta, steps=4)

    def test_quadratic_toy_matches_closed_form(self):
        # one dense layer, single input x=1, label 0: the loss along any
        # parameter plane is log(1 + exp((w2 + d2) - (w1 + d1)))
        from takd.data import Dataset
        from takd.models import LayerSpec, NetworkSpec

        net_spec = NetworkSpec("mlp", 1, (
            LayerSpec("dense", 1, False, None),
            LayerSpec("dense", 2),
        ), 2, (1,))
        model = build_model(net_spec, seed=0)
        # collapse the hidden layer to the identity
        model.parameters["layer0.weight"].value[:] = 1.0
        model.parameters["layer0.bias"].value[:] = 0.0
        w = np.array([[0.4], [-0.3]], dtype=np.float32)
        model.parameters["layer1.weight"].value[:] = w
        model.parameters["layer1.bias"].value[:] = 0.0

        x = np.ones((1, 1), dtype=np.float32)
        y = np.zeros(1, dtype=np.int64)
        ds = Dataset(x, y, x, y, 2)

        delta = model.parameters.astype(np.float64).copy()
        eta = model.parameters.astype(np.float64).copy()
        for ps in (delta, eta):
            for p in ps:
                p.value[:] = 0.0
        delta["layer1.weight"].value[:] = np.array([[1.0], [0.0]])
        eta["layer1.weight"].value[:] = np.array([[0.0], [1.0]])

        surf = loss_surface(model, ds, delta, eta, radius=1.0, steps=9)
        w1, w2 = float(w[0, 0]), float(w[1, 0])
        for i, a in enumerate(surf.offsets):
            for j, b in enumerate(surf.offsets):
                # logits are (w1 + a, w2 + b) after the identity hidden layer
                expected = np.log1p(np.exp((w2 + b) - (w1 + a)))
                assert abs(surf.grid[i, j] - expected) < 1e-6

    def test_non_finite_cells_flagged_not_fatal(self, toy_model, toy_data):
        delta, eta = filter_normalized_directions(toy_model, seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            surf = loss_surface(toy_model, toy_data, delta, eta,
                                radius=1e30, steps=3)
        assert np.isfinite(surf.grid[1, 1])  # origin untouched
        for i, j in surf.non_finite:
            assert not np.isfinite(surf.grid[i, j])

    def test_bit_exact_determinism(self, toy_model, toy_data):
        delta, eta = filter_normalized_directions(toy_model, seed=1)
        s1 = loss_surface(toy_model, toy_data, delta, eta, radius=1.0, steps=5)
        s2 = loss_surface(toy_model, toy_data, delta, eta, radius=1.0, steps=5)
        assert np.array_equal(s1.grid, s2.grid)


class TestFlatness:
    def _surface(self, grid, radius=1.0):
        steps = grid.shape[0]
        mid = steps // 2
        offsets = (np.arange(steps) - mid) * (radius / mid)
        return LossSurface(np.asarray(grid, dtype=np.float64), offsets,
                           radius, float(grid[mid][mid]), 0)

    def test_constant_surface_zero(self):
        surf = self._surface(np.full((5, 5), 3.3))
        assert flatness_metric(surf) == 0.0

    def test_scaling_linearity(self):
        rs = np.random.RandomState(0)
        grid = rs.uniform(1.0, 2.0, (7, 7))
        grid[3, 3] = 1.0
        surf = self._surface(grid)
        doubled = self._surface(grid * 2.0)
        assert flatness_metric(doubled) == pytest.approx(
            2.0 * flatness_metric(surf))

    def test_constant_shift_invariant(self):
        rs = np.random.RandomState(1)
        grid = rs.uniform(1.0, 2.0, (9, 9))
        surf = self._surface(grid)
        shifted = self._surface(grid + 11.0)
        assert flatness_metric(shifted) == pytest.approx(
            flatness_metric(surf), abs=1e-12)

    def test_quadratic_bowl_proportional(self):
        steps = 41
        mid = steps // 2
        offsets = (np.arange(steps) - mid) / mid
        aa, bb = np.meshgrid(offsets, offsets, indexing="ij")
        for coeff in (0.5, 2.0):
            grid = coeff * (aa**2 + bb**2)
            surf = self._surface(grid)
            metric = flatness_metric(surf)
            # ring radii are within half a step of 1, so the mean of r^2
            # over the ring is close to 1
            assert metric == pytest.approx(coeff, rel=0.05)
        g1 = flatness_metric(self._surface(1.0 * (aa**2 + bb**2)))
        g3 = flatness_metric(self._surface(3.0 * (aa**2 + bb**2)))
        assert g3 == pytest.approx(3.0 * g1, rel=1e-12)

    def test_radius_below_one_rejected(self):
        surf = self._surface(np.zeros((5, 5)), radius=0.5)
        with pytest.raises(ParameterError):
            flatness_metric(surf)


def test_surface_csv_round_trip(tmp_path, toy_model, toy_data):
    delta, eta = filter_normalized_directions(toy_model, seed=0)
    surf = loss_surface(toy_model, toy_data, delta, eta, radius=1.0, steps=5)
    path = tmp_path / "surface.csv"
    write_surface_csv(surf, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "a,b,loss"
    assert len(lines) == 1 + 25
    again = read_surface_csv(path)
    assert np.allclose(again.grid, surf.grid, rtol=1e-8)
