import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rk4_discretisation
from mskoopman.dynamics import (PlantSpec, SamplingSpec, TrajectoryDataset, generate_dataset,
                                plant_derivative, prbs_sequence, read_dataset_csv, rk4_step,
                                trajectory_rng, write_dataset_csv)
from mskoopman.errors import ContractViolation, IntegrationOverflowError

BOX = ((-2.0, 2.0), (-2.0, 2.0))


class TestPlantDerivative:
    def test_origin_is_equilibrium(self):
        for plant in (PlantSpec.van_der_pol(), PlantSpec.duffing()):
            np.testing.assert_array_equal(plant_derivative(plant, [0.0, 0.0], [0.0]), [0, 0])

    def test_duffing_well_bottom(self):
        np.testing.assert_array_equal(
            plant_derivative(PlantSpec.duffing(), [1.0, 0.0], [0.0]), [0.0, 0.0])
        np.testing.assert_array_equal(
            plant_derivative(PlantSpec.duffing(), [-1.0, 0.0], [0.0]), [0.0, 0.0])

    def test_vdp_hand_value(self):
        # x2' = 5 (1 - 1) 1 - 0.64 * 1 + 0
        np.testing.assert_allclose(
            plant_derivative(PlantSpec.van_der_pol(), [1.0, 1.0], [0.0]), [1.0, -0.64],
            rtol=0, atol=1e-15)

    def test_input_enters_second_coordinate(self):
        plant = PlantSpec.duffing()
        d0 = plant_derivative(plant, [0.3, -0.2], [0.0])
        d1 = plant_derivative(plant, [0.3, -0.2], [0.7])
        np.testing.assert_allclose(d1 - d0, [0.0, 0.7], atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            plant_derivative(PlantSpec.van_der_pol(), [0.0, 0.0, 0.0], [0.0])
        with pytest.raises(ContractViolation):
            plant_derivative(PlantSpec.van_der_pol(), [0.0, 0.0], [0.0, 1.0])

    def test_batched_matches_single(self):
        plant = PlantSpec.van_der_pol()
        rng = np.random.default_rng(3)
        x, u = rng.normal(size=(7, 2)), rng.normal(size=(7, 1))
        batch = plant_derivative(plant, x, u)
        for j in range(7):
            np.testing.assert_array_equal(batch[j], plant_derivative(plant, x[j], u[j]))


class TestPlantSpec:
    def test_oscillator_dimensions(self):
        with pytest.raises(ContractViolation):
            PlantSpec("VanDerPol", {"mu": 1.0, "omega0": 1.0}, 3, 1)

    def test_non_finite_parameter(self):
        with pytest.raises(ContractViolation):
            PlantSpec.duffing(delta=math.inf)

    def test_linear_test_roundtrip(self):
        A = np.array([[0.0, 1.0], [-2.0, -0.3]])
        B = np.array([[0.0], [1.0]])
        plant = PlantSpec.linear_test(A, B)
        A2, B2 = plant.linear_matrices()
        np.testing.assert_array_equal(A, A2)
        np.testing.assert_array_equal(B, B2)
        again = PlantSpec.from_params("LinearTest", dict(plant.params))
        np.testing.assert_array_equal(again.linear_matrices()[0], A)

    def test_params_read_only(self):
        plant = PlantSpec.duffing()
        with pytest.raises(TypeError):
            plant.params["delta"] = 1.0


class TestRk4:
    def test_exponential_decay(self):
        plant = PlantSpec.linear_test([[-1.0]], [[0.0]])
        x = rk4_step(plant, [1.0], [0.0], 0.1)
        assert abs(x[0] - math.exp(-0.1)) < 1e-7

    def test_equilibrium_exact(self):
        for plant in (PlantSpec.van_der_pol(), PlantSpec.duffing()):
            for h in (1e-3, 0.01, 0.5):
                np.testing.assert_array_equal(rk4_step(plant, [0.0, 0.0], [0.0], h), [0, 0])

    def test_fixed_point(self):
        plant = PlantSpec.duffing()
        np.testing.assert_array_equal(rk4_step(plant, [1.0, 0.0], [0.0], 0.3), [1.0, 0.0])

    def test_order_four(self):
        # one-step error of x' = lam x shrinks by ~2^5 per halving; assert >= 2^4 * 0.9
        plant = PlantSpec.linear_test([[-1.3]], [[0.0]])
        hs = 0.2 / 2.0 ** np.arange(4)
        errs = [abs(rk4_step(plant, [1.0], [0.0], h)[0] - math.exp(-1.3 * h)) for h in hs]
        for e_big, e_small in zip(errs, errs[1:]):
            assert e_big / e_small >= 16 * 0.9

    def test_linear_map_matches_discretisation(self):
        A = np.array([[0.0, 1.0], [-2.0, -0.3]])
        B = np.array([[0.0], [1.0]])
        Phi, Gam = rk4_discretisation(A, B, 0.1)
        x, u = np.array([0.4, -1.2]), np.array([0.5])
        np.testing.assert_allclose(rk4_step(PlantSpec.linear_test(A, B), x, u, 0.1),
                                   Phi @ x + Gam @ u, rtol=0, atol=1e-14)

    def test_overflow_raises(self):
        plant = PlantSpec.linear_test([[1e308]], [[0.0]])
        with pytest.raises(IntegrationOverflowError) as exc:
            rk4_step(plant, [1e10], [0.0], 1.0, trajectory=7)
        assert exc.value.trajectory == 7

    def test_bad_step(self):
        with pytest.raises(ContractViolation):
            rk4_step(PlantSpec.duffing(), [0.0, 0.0], [0.0], 0.0)


class TestPrbs:
    @pytest.mark.parametrize("amp", [0.5, 1.0])
    def test_two_levels(self, amp):
        seq = prbs_sequence(1000, amp, np.random.default_rng(0))
        assert set(np.unique(seq)) == {-amp, amp}

    def test_zero_amplitude(self):
        seq = prbs_sequence(50, 0.0, np.random.default_rng(0))
        assert np.all(seq == 0.0)
        assert not np.any(np.signbit(seq))

    def test_empirical_mean(self):
        a = 0.7
        seq = prbs_sequence(10_000, a, np.random.default_rng(12345))
        assert -0.1 * a <= seq.mean() <= 0.1 * a

    def test_negative_amplitude(self):
        with pytest.raises(ContractViolation):
            prbs_sequence(3, -1.0, np.random.default_rng(0))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 200), st.floats(0.0, 10.0), st.integers(1, 3))
    def test_shape_and_support(self, n, amp, n_u):
        seq = prbs_sequence(n, amp, np.random.default_rng(1), n_u)
        assert seq.shape == (n, n_u)
        assert np.all(np.abs(seq) == amp)


class TestDataset:
    def test_vdp_shapes(self):
        spec = SamplingSpec(20, 0.01, 30, BOX, 0.5, 1)
        ds = generate_dataset(PlantSpec.van_der_pol(), spec)
        assert ds.states.shape == (30, 21, 2)
        assert ds.controls.shape == (30, 20, 1)
        assert set(np.unique(ds.controls)) <= {-0.5, 0.5}
        assert np.all(np.abs(ds.states[:, 0]) <= 2.0)

    def test_minimal(self):
        ds = generate_dataset(PlantSpec.duffing(), SamplingSpec(1, 0.025, 1, BOX, 1.0, 0))
        x, u, xn = ds.one_step_pairs()
        assert x.shape == (1, 2) and u.shape == (1, 1) and xn.shape == (1, 2)
        np.testing.assert_array_equal(xn[0], rk4_step(PlantSpec.duffing(), x[0], u[0], 0.025))

    def test_deterministic(self):
        spec = SamplingSpec(15, 0.025, 40, BOX, 1.0, 9)
        a = generate_dataset(PlantSpec.duffing(), spec)
        b = generate_dataset(PlantSpec.duffing(), spec)
        assert a.states.tobytes() == b.states.tobytes()
        assert a.controls.tobytes() == b.controls.tobytes()

    def test_thread_count_independent(self):
        spec = SamplingSpec(15, 0.01, 37, BOX, 0.5, 4)
        a = generate_dataset(PlantSpec.van_der_pol(), spec, threads=1)
        b = generate_dataset(PlantSpec.van_der_pol(), spec, threads=4)
        assert a.states.tobytes() == b.states.tobytes()
        assert a.controls.tobytes() == b.controls.tobytes()

    def test_trajectory_substreams(self):
        # trajectory j of a larger set equals the same trajectory in a smaller one
        small = generate_dataset(PlantSpec.duffing(), SamplingSpec(5, 0.025, 3, BOX, 1.0, 2))
        big = generate_dataset(PlantSpec.duffing(), SamplingSpec(5, 0.025, 10, BOX, 1.0, 2))
        np.testing.assert_array_equal(small.states, big.states[:3])
        assert trajectory_rng(2, 0).random() == trajectory_rng(2, 0).random()

    def test_different_seeds_differ(self):
        a = generate_dataset(PlantSpec.duffing(), SamplingSpec(5, 0.025, 10, BOX, 1.0, 1))
        b = generate_dataset(PlantSpec.duffing(), SamplingSpec(5, 0.025, 10, BOX, 1.0, 2))
        assert not np.any(np.all(a.states[:, 0, None] == b.states[None, :, 0], axis=-1))

    def test_origin_stays_at_origin(self):
        for plant in (PlantSpec.van_der_pol(), PlantSpec.duffing()):
            spec = SamplingSpec(50, 0.01, 1, ((0.0, 1e-300), (0.0, 1e-300)), 0.0, 0)
            ds = generate_dataset(plant, spec)
            assert np.all(np.abs(ds.states) < 1e-250)

    def test_overflow_identifies_trajectory(self):
        plant = PlantSpec.linear_test([[1e300]], [[0.0]])
        spec = SamplingSpec(3, 1.0, 4, ((1.0, 2.0),), 0.0, 0)
        with pytest.raises(IntegrationOverflowError) as exc:
            generate_dataset(plant, spec)
        assert exc.value.trajectory == 0

    def test_sampling_validation(self):
        with pytest.raises(ContractViolation):
            SamplingSpec(0, 0.01, 1, BOX, 0.5, 0)
        with pytest.raises(ContractViolation):
            SamplingSpec(1, 0.01, 1, ((1.0, 1.0),), 0.5, 0)
        with pytest.raises(ContractViolation):
            SamplingSpec(1, -0.01, 1, BOX, 0.5, 0)

    def test_dataset_validation(self):
        with pytest.raises(ContractViolation):
            TrajectoryDataset(np.zeros((2, 3, 1)), np.zeros((2, 3, 1)))
        with pytest.raises(ContractViolation):
            TrajectoryDataset(np.full((1, 2, 1), np.nan), np.zeros((1, 1, 1)))

    def test_one_step_pairs(self):
        ds = generate_dataset(PlantSpec.duffing(), SamplingSpec(4, 0.025, 3, BOX, 1.0, 0))
        x, u, xn = ds.one_step_pairs("all")
        assert x.shape == (12, 2)
        np.testing.assert_array_equal(x[1], ds.states[0, 1])
        np.testing.assert_array_equal(xn[1], ds.states[0, 2])
        x, u, xn = ds.one_step_pairs("first")
        np.testing.assert_array_equal(x, ds.states[:, 0])

    def test_csv_roundtrip(self, tmp_path):
        ds = generate_dataset(PlantSpec.van_der_pol(), SamplingSpec(6, 0.01, 5, BOX, 0.5, 3))
        path = tmp_path / "d.csv"
        write_dataset_csv(ds, path)
        back = read_dataset_csv(path)
        assert back.states.tobytes() == ds.states.tobytes()
        assert back.controls.tobytes() == ds.controls.tobytes()
        lines = path.read_text().splitlines()
        assert lines[0] == "traj,step,x1,x2,u1"
        assert lines[7].endswith(",")  # final step of trajectory 0 has no control
