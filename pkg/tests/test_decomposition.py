from __future__ import annotations

import time

import numpy as np
import pytest

from sky_nowcast.decomposition import (
    SnapshotMatrix,
    admissible_rank,
    augment_snapshots,
    build_snapshot_matrix,
    compute_dmd,
    compute_pod,
    evaluate_dmd,
    reconstruct_series,
    reconstruction_error,
    unflatten,
)
from sky_nowcast.errors import DataError, NumericalError, RankError
from sky_nowcast.models import FrameSequence
from sky_nowcast.synth import generate_linear_modes


def _make_patterns(n: int, count: int, seed: int = 0) -> np.ndarray:
    """正規直交な空間パターン (n×count) を生成する。"""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, count)))
    return q


def _make_cosine(samples: int, freq: float = 0.2) -> SnapshotMatrix:
    """スカラーの余弦波 x_k = cos(freq·k)。"""
    return SnapshotMatrix.from_array(np.cos(freq * np.arange(samples)), dt=1.0)


def _nearest_errors(found: np.ndarray, expected: list[complex]) -> list[float]:
    """期待値ごとに最も近い推定値との距離を返す。"""
    return [float(np.min(np.abs(found - e))) for e in expected]


class TestSnapshotMatrix:
    def test_column_major_flattening(self) -> None:
        frame = np.array([[0.1, 0.2], [0.3, 0.4]])
        x = build_snapshot_matrix(FrameSequence(frame[np.newaxis], dt=1.0))
        # 列優先: (a, c, b, d)
        assert x.data[:, 0] == pytest.approx([0.1, 0.3, 0.2, 0.4])

    def test_shape_and_dt(self) -> None:
        frames = np.zeros((210, 3, 5))
        x = build_snapshot_matrix(FrameSequence(frames, dt=2.0))
        assert (x.n_rows, x.n_cols) == (15, 210)
        assert x.dt == 2.0
        assert x.n_cols * x.dt == pytest.approx(420.0)

    def test_unflatten_inverts_flattening(self) -> None:
        rng = np.random.default_rng(1)
        frames = rng.uniform(size=(4, 6, 7))
        x = build_snapshot_matrix(FrameSequence(frames, dt=1.0))
        for k in range(4):
            assert np.array_equal(unflatten(x.data[:, k], 6, 7), frames[k])

    def test_data_is_read_only(self) -> None:
        x = SnapshotMatrix.from_array(np.ones((3, 4)), dt=1.0)
        with pytest.raises(ValueError):
            x.data[0, 0] = 2.0

    def test_row_count_mismatch_raises(self) -> None:
        with pytest.raises(DataError):
            SnapshotMatrix(data=np.ones((5, 3)), dt=1.0, height=2, width=2)


class TestAugmentSnapshots:
    def test_scalar_series(self) -> None:
        x = SnapshotMatrix.from_array(np.array([1.0, 2.0, 3.0, 4.0]), dt=1.0)
        xa = augment_snapshots(x, 1)
        assert np.array_equal(xa.data, [[1, 2, 3], [2, 3, 4]])
        assert xa.augment_levels == 1

    def test_zero_levels_is_identity(self) -> None:
        x = SnapshotMatrix.from_array(np.arange(6.0).reshape(2, 3), dt=1.0)
        assert augment_snapshots(x, 0) is x

    def test_cosine_becomes_rank_two(self) -> None:
        x = SnapshotMatrix.from_array(np.cos(0.3 * np.arange(30)), dt=1.0)
        xa = augment_snapshots(x, 1)
        s = np.linalg.svd(xa.data, compute_uv=False)
        assert np.count_nonzero(s > s[0] * 1e-10) == 2

    def test_too_few_columns_raises(self) -> None:
        x = SnapshotMatrix.from_array(np.array([1.0, 2.0]), dt=1.0)
        with pytest.raises(DataError):
            augment_snapshots(x, 1)


class TestComputePod:
    def test_properties_on_random_matrices(self) -> None:
        for seed in range(100):
            rng = np.random.default_rng(seed)
            x = SnapshotMatrix.from_array(rng.standard_normal((200, 20)), dt=1.0)
            pod = compute_pod(x)
            u, s, v = pod.spatial_modes, pod.singular_values, pod.temporal_modes
            assert np.allclose(u.T @ u, np.eye(20), atol=1e-10)
            assert np.allclose(v.T @ v, np.eye(20), atol=1e-10)
            assert np.all(np.diff(s) <= 0)
            err = np.linalg.norm(pod.reconstruct() - x.data) / np.linalg.norm(x.data)
            assert err < 1e-10

    def test_small_full_reconstruction(self) -> None:
        rng = np.random.default_rng(7)
        x = SnapshotMatrix.from_array(rng.uniform(size=(50, 8)), dt=1.0)
        pod = compute_pod(x)
        err = np.linalg.norm(pod.reconstruct(8) - x.data) / np.linalg.norm(x.data)
        assert err < 1e-10

    def test_constant_sequence_is_rank_one(self) -> None:
        frames = np.full((10, 4, 4), 0.3)
        pod = compute_pod(build_snapshot_matrix(FrameSequence(frames, dt=1.0)))
        assert pod.singular_values[1] < 1e-12 * pod.singular_values[0]
        assert pod.energy_fraction()[0] == pytest.approx(1.0)

    def test_first_mode_image_of_constant_sequence(self) -> None:
        image = np.linspace(0.0, 1.0, 12).reshape(3, 4)
        frames = np.repeat(image[np.newaxis], 6, axis=0)
        pod = compute_pod(build_snapshot_matrix(FrameSequence(frames, dt=1.0)))
        assert np.allclose(pod.first_mode_image(3, 4), image, atol=1e-10)

    def test_temporal_spectrum_peaks_at_oscillation(self) -> None:
        t = np.arange(40)
        data = np.outer(_make_patterns(30, 1)[:, 0], 1.0 + 0.5 * np.cos(2 * np.pi * 0.05 * t))
        pod = compute_pod(SnapshotMatrix.from_array(data, dt=1.0))
        spectrum = pod.temporal_spectrum(dt=1.0, modes=1)
        assert list(spectrum.columns) == ["mode_1"]
        assert spectrum.index[0] == 0.0
        assert spectrum.index[-1] == pytest.approx(0.5)
        assert spectrum["mode_1"].iloc[1:].idxmax() == pytest.approx(0.05)

    def test_temporal_spectrum_of_constant_sequence(self) -> None:
        frames = np.full((16, 4, 4), 0.3)
        pod = compute_pod(build_snapshot_matrix(FrameSequence(frames, dt=2.0)))
        spectrum = pod.temporal_spectrum(dt=2.0, modes=1)
        assert spectrum.index[-1] == pytest.approx(0.25)
        assert spectrum["mode_1"].idxmax() == 0.0
        assert spectrum["mode_1"].iloc[1:].max() < 1e-10

    def test_temporal_spectrum_rejects_bad_arguments(self) -> None:
        pod = compute_pod(SnapshotMatrix.from_array(np.eye(4), dt=1.0))
        with pytest.raises(ValueError):
            pod.temporal_spectrum(dt=0.0)
        with pytest.raises(ValueError):
            pod.temporal_spectrum(dt=1.0, modes=5)

    def test_non_finite_raises(self) -> None:
        x = SnapshotMatrix.from_array(np.array([[1.0, np.nan], [0.0, 1.0]]), dt=1.0)
        with pytest.raises(NumericalError):
            compute_pod(x)


class TestComputeDmd:
    def test_recovers_two_decay_rates(self) -> None:
        patterns = _make_patterns(100, 2)
        x = generate_linear_modes(patterns, [-0.1, -0.05], [1.0, 1.0], steps=20, dt=0.5)
        model = compute_dmd(x, 2, augment_levels=0)
        assert sorted(model.exponents.real) == pytest.approx([-0.1, -0.05], abs=1e-8)
        assert np.allclose(model.exponents.imag, 0.0, atol=1e-8)

    def test_spectral_recovery_with_oscillation(self) -> None:
        patterns = _make_patterns(50, 3, seed=3)
        expected = [-0.1, 0.5j, -0.5j]
        x = generate_linear_modes(patterns, expected, [1.0, 1.0, 1.0], steps=20, dt=0.5)
        start = time.perf_counter()
        model = compute_dmd(x, 3, augment_levels=0)
        assert time.perf_counter() - start < 1.0
        assert max(_nearest_errors(model.exponents, expected)) < 1e-6

    def test_exponent_eigenvalue_round_trip(self) -> None:
        patterns = _make_patterns(50, 3, seed=4)
        x = generate_linear_modes(patterns, [-0.2, 0.3j, -0.3j], [1.0, 0.5, 0.5], steps=25, dt=0.5)
        model = compute_dmd(x, 3, augment_levels=1)
        assert np.allclose(np.exp(model.exponents * model.dt), model.eigenvalues, atol=1e-12)

    def test_real_data_gives_conjugate_closed_spectrum(self) -> None:
        rng = np.random.default_rng(11)
        x = SnapshotMatrix.from_array(rng.standard_normal((30, 15)), dt=1.0)
        lam = compute_dmd(x, 6, augment_levels=0).eigenvalues
        for value in lam:
            assert np.min(np.abs(lam - np.conj(value))) < 1e-8

    def test_cosine_with_augmentation_gives_unit_pair(self) -> None:
        model = compute_dmd(_make_cosine(40), 2, augment_levels=1)
        assert np.abs(model.eigenvalues) == pytest.approx([1.0, 1.0], abs=1e-8)
        assert sorted(np.angle(model.eigenvalues)) == pytest.approx([-0.2, 0.2], abs=1e-8)

    def test_augmentation_is_needed_for_oscillation(self) -> None:
        x = _make_cosine(40)
        augmented = reconstruction_error(compute_dmd(x, 2, augment_levels=1), x)
        plain = reconstruction_error(compute_dmd(x, 1, augment_levels=0), x)
        assert augmented * 10 <= plain

    def test_constant_data_has_unit_eigenvalue(self) -> None:
        x = SnapshotMatrix.from_array(np.ones((5, 10)), dt=1.0)
        model = compute_dmd(x, 1, augment_levels=0)
        assert model.eigenvalues[0] == pytest.approx(1.0, abs=1e-12)

    def test_truncation_error_nonincreasing(self) -> None:
        patterns = _make_patterns(80, 5, seed=5)
        x = generate_linear_modes(
            patterns,
            [-0.01, -0.02, -0.03, -0.04, -0.05],
            [1.0, 0.1, 0.01, 0.001, 0.0001],
            steps=30,
            dt=1.0,
        )
        errors = [reconstruction_error(compute_dmd(x, r, augment_levels=0), x) for r in range(1, 6)]
        assert all(b <= a + 1e-9 for a, b in zip(errors, errors[1:]))
        assert errors[-1] < 1e-6

    def test_order_above_rank_raises(self) -> None:
        x = SnapshotMatrix.from_array(np.random.default_rng(0).standard_normal((3, 5)), dt=1.0)
        with pytest.raises(RankError):
            compute_dmd(x, 10, augment_levels=0)

    def test_rank_deficient_data_raises(self) -> None:
        x = SnapshotMatrix.from_array(np.ones((5, 10)), dt=1.0)
        with pytest.raises(RankError):
            compute_dmd(x, 2, augment_levels=0)

    def test_fit_at_desktop_scale(self) -> None:
        rng = np.random.default_rng(0)
        x = SnapshotMatrix.from_array(rng.uniform(size=(10000, 100)), dt=2.0)
        start = time.perf_counter()
        compute_dmd(x, 3, augment_levels=1)
        assert time.perf_counter() - start <= 7.0

    def test_spectrum_columns(self) -> None:
        model = compute_dmd(_make_cosine(40), 2, augment_levels=1)
        df = model.spectrum()
        assert list(df.columns) == [
            "lambda_abs", "lambda_angle", "omega_real", "omega_imag", "frequency_hz", "amplitude_abs",
        ]
        assert len(df) == 2

    def test_mode_weights(self) -> None:
        model = compute_dmd(_make_cosine(40), 2, augment_levels=1)
        expected = np.linalg.norm(model.modes, axis=0) * np.abs(model.amplitudes)
        assert model.mode_weights == pytest.approx(expected)
        assert np.all(model.mode_weights >= 0)


class TestAdmissibleRank:
    def test_caps_at_data_rank(self) -> None:
        patterns = _make_patterns(40, 2)
        x = generate_linear_modes(patterns, [-0.1, -0.05], [1.0, 1.0], steps=20, dt=0.5)
        assert admissible_rank(x, 5, augment_levels=0, rtol=1e-8) == 2

    def test_zero_data(self) -> None:
        x = SnapshotMatrix.from_array(np.zeros((4, 10)), dt=1.0)
        assert admissible_rank(x, 3) == 0


class TestEvaluateDmd:
    def test_pure_decay(self) -> None:
        x = SnapshotMatrix.from_array(np.exp(-0.1 * np.arange(20.0)), dt=1.0)
        model = compute_dmd(x, 1, augment_levels=0)
        assert evaluate_dmd(model, 10.0)[0] == pytest.approx(np.exp(-1.0) * evaluate_dmd(model, 0.0)[0], abs=1e-10)

    def test_initial_state_is_projection(self) -> None:
        patterns = _make_patterns(60, 2, seed=8)
        x = generate_linear_modes(patterns, [-0.1, -0.05], [1.0, 1.0], steps=20, dt=0.5)
        model = compute_dmd(x, 2, augment_levels=0)
        assert np.allclose(evaluate_dmd(model, 0.0), x.data[:, 0], atol=1e-8)

    def test_matches_closed_form(self) -> None:
        patterns = _make_patterns(100, 2, seed=9)
        x = generate_linear_modes(patterns, [-0.1, -0.05], [1.0, 1.0], steps=20, dt=0.5)
        model = compute_dmd(x, 2, augment_levels=0)
        expected = patterns[:, 0] * np.exp(-0.5) + patterns[:, 1] * np.exp(-0.25)
        assert np.allclose(evaluate_dmd(model, 5.0), expected, atol=1e-6)

    def test_image_valued_output_is_clamped(self) -> None:
        x = SnapshotMatrix.from_array(0.5 * np.exp(0.1 * np.arange(10.0)), dt=1.0)
        model = compute_dmd(x, 1, augment_levels=0, image_valued=True)
        assert evaluate_dmd(model, 20.0)[0] == 1.0

    def test_negative_time_raises(self) -> None:
        x = SnapshotMatrix.from_array(np.exp(-0.1 * np.arange(10.0)), dt=1.0)
        model = compute_dmd(x, 1, augment_levels=0)
        with pytest.raises(ValueError):
            evaluate_dmd(model, -1.0)

    def test_overflow_raises(self) -> None:
        x = SnapshotMatrix.from_array(np.exp(0.1 * np.arange(10.0)), dt=1.0)
        model = compute_dmd(x, 1, augment_levels=0)
        with pytest.raises(NumericalError):
            evaluate_dmd(model, 1e5)


class TestReconstructSeries:
    def test_rank_two_data(self) -> None:
        patterns = _make_patterns(100, 2, seed=10)
        x = generate_linear_modes(patterns, [-0.1, -0.05], [1.0, 1.0], steps=20, dt=0.5)
        model = compute_dmd(x, 2, augment_levels=0)
        recon = reconstruct_series(model, x.n_cols)
        assert recon.data.shape == x.data.shape
        assert reconstruction_error(model, x) <= 1e-6

    def test_noisy_data_error_near_noise_floor(self) -> None:
        patterns = _make_patterns(100, 2, seed=12)
        x = generate_linear_modes(patterns, [-0.1, -0.05], [1.0, 1.0], steps=20, dt=0.5)
        rng = np.random.default_rng(12)
        noisy = SnapshotMatrix.from_array(x.data + rng.uniform(-1e-3, 1e-3, size=x.data.shape), dt=0.5)
        assert reconstruction_error(compute_dmd(noisy, 2, augment_levels=0), noisy) < 5e-2

    def test_state_size_mismatch_raises(self) -> None:
        model = compute_dmd(_make_cosine(40), 2, augment_levels=1)
        with pytest.raises(DataError):
            reconstruction_error(model, SnapshotMatrix.from_array(np.ones((3, 5)), dt=1.0))
