"""
Tests for the training, receiver and shaping pipelines.

Most tests use the reduced-budget session fixtures from conftest and are
marked slow. The direction classes train at the default configuration and
record the DDPM-versus-DNN comparison at -5 dB.
"""

import math

import numpy as np
import pytest

from app.comms import ChannelKind, ChannelModel, apply_channel, build_qam, frame_from_indices
from app.exceptions import DimensionError, StateError
from app.pipelines import (
    measure_mutual_information,
    run_mi_sweep,
    run_receiver_ber_sweep,
    run_shaping,
    shape_constellation,
    train_ddpm_on_constellation,
    train_dnn_baseline,
)
from app.pipelines.ddpm import build_diffusion_model
from app.pipelines.receiver import ber_improvement
from app.pipelines.shaping import power_normalized
from app.schemas import (
    BaselineConfig,
    DenoiserConfig,
    ReceiverExperimentConfig,
    ScheduleConfig,
    ShapingExperimentConfig,
    TrainingConfig,
)
from app.utils import derive_rng, snr_key

TINY_DENOISER = DenoiserConfig(hidden_width=8, hidden_layers=2, embed_dim=8)


@pytest.mark.unit
class TestTrainingDeterminism:

    def test_ddpm_same_seed_same_checksum(self):
        training = TrainingConfig(order=4, n_samples=256, batch_size=64, epochs=1)
        a, trace_a = train_ddpm_on_constellation(4, ScheduleConfig(), TINY_DENOISER, training, 3)
        b, trace_b = train_ddpm_on_constellation(4, ScheduleConfig(), TINY_DENOISER, training, 3)
        assert a.denoiser.checksum() == b.denoiser.checksum()
        assert trace_a.epoch_losses == trace_b.epoch_losses
        assert a.trained_steps == 4

    def test_ddpm_seed_changes_model(self):
        training = TrainingConfig(order=4, n_samples=256, batch_size=64, epochs=1)
        a, _ = train_ddpm_on_constellation(4, ScheduleConfig(), TINY_DENOISER, training, 3)
        b, _ = train_ddpm_on_constellation(4, ScheduleConfig(), TINY_DENOISER, training, 4)
        assert a.denoiser.checksum() != b.denoiser.checksum()

    def test_baseline_same_seed_same_checksum(self):
        cfg = BaselineConfig(order=4, n_samples=256, epochs=1, hidden_width=8, hidden_layers=1)
        a, _ = train_dnn_baseline(cfg, 5)
        b, _ = train_dnn_baseline(cfg, 5)
        assert a.net.checksum() == b.net.checksum()
        assert a.order == 4
        assert a.trained_steps == 1


@pytest.mark.unit
class TestMutualInformationCurve:

    def test_uniform_qam_over_awgn(self):
        c = build_qam(16)
        uniform = np.full(16, 1 / 16)
        grid = np.arange(-15.0, 35.0, 5.0)
        values = []
        for snr in grid:
            ch = ChannelModel(ChannelKind.AWGN, float(snr))
            mi, counts = measure_mutual_information(c, uniform, ch, 20_000, derive_rng(0, snr_key(snr)))
            assert counts.sum() == 20_000
            values.append(mi)

        assert all(b >= a - 0.05 for a, b in zip(values, values[1:]))
        assert values[-1] >= 0.95 * 4.0
        assert all(0.0 <= v <= 4.0 + 1e-9 for v in values)

    def test_power_normalization(self):
        c = build_qam(16)
        probs = np.linspace(1.0, 2.0, 16)
        probs /= probs.sum()
        scaled = power_normalized(c, probs)
        energy = np.sum(probs * np.sum(scaled.points ** 2, axis=1))
        assert energy == pytest.approx(1.0)


@pytest.mark.unit
class TestImprovement:

    def test_clear_improvement_is_significant(self):
        result = ber_improvement(10, 100, 10_000)
        assert result["relative"] == pytest.approx(0.9)
        assert result["significant"]

    def test_equal_error_counts(self):
        result = ber_improvement(50, 50, 10_000)
        assert result["relative"] == pytest.approx(0.0)
        assert not result["significant"]

    def test_error_free_baseline(self):
        result = ber_improvement(0, 0, 1000)
        assert result["relative"] is None
        assert result["p_value"] == 1.0


@pytest.mark.unit
class TestUntrainedModels:

    def test_sweeps_reject_untrained_ddpm(self):
        model = build_diffusion_model(ScheduleConfig(), TINY_DENOISER, 0)
        baseline, _ = train_dnn_baseline(
            BaselineConfig(order=16, n_samples=64, epochs=1, hidden_width=8, hidden_layers=1), 0
        )
        with pytest.raises(StateError):
            run_receiver_ber_sweep(model, baseline, ReceiverExperimentConfig(), 0)
        with pytest.raises(StateError):
            run_mi_sweep(model, baseline, ShapingExperimentConfig(), 0)
        with pytest.raises(StateError):
            run_shaping(model, ShapingExperimentConfig(), 0)


@pytest.mark.slow
class TestBaseline:

    def test_loss_decreases(self, trained_baseline):
        _, trace = trained_baseline
        assert trace.final_loss < trace.initial_loss

    def test_accurate_at_high_snr(self, trained_baseline):
        baseline, _ = trained_baseline
        c = build_qam(16)
        rng = np.random.default_rng(31)
        frame = frame_from_indices(rng.integers(0, 16, size=5000), c)
        frame = apply_channel(frame, ChannelModel(ChannelKind.AWGN, 30.0), rng)
        decided = baseline.classify(frame.rx_symbols, 30.0)
        assert np.mean(decided == frame.tx_indices) >= 0.999

    def test_probabilities_are_distributions(self, trained_baseline):
        baseline, _ = trained_baseline
        probs = baseline.probabilities(np.zeros((3, 2)), np.array([-20.0, 0.0, 20.0]))
        assert probs.shape == (3, 16)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)


@pytest.mark.slow
class TestReceiverSweep:

    CFG = ReceiverExperimentConfig(
        order=16, snr_grid=[-10.0, 30.0], symbols_per_snr=2000, sampling_runs=2
    )

    def test_table_layout(self, trained_ddpm, trained_baseline):
        model, _ = trained_ddpm
        baseline, _ = trained_baseline
        table = run_receiver_ber_sweep(model, baseline, self.CFG, seed=7)

        assert len(table.rows) == 2 * 3 * 2
        records = table.records()
        for record in records:
            assert record["n_bits"] == 2000 * 4
            assert record["seed"] == 7
            assert 0.0 <= record["ci_low"] <= record["ci_high"] <= 1.0
            expected = model.denoiser.checksum() if record["receiver"] == "ddpm" else baseline.net.checksum()
            assert record["model_checksum"] == expected
        assert [r["snr_db"] for r in records[:6]] == [-10.0] * 6
        assert set(table.metadata["improvement"]) == {"awgn", "laplacian", "hwi"}

    def test_high_snr_awgn_is_nearly_error_free(self, trained_ddpm, trained_baseline):
        model, _ = trained_ddpm
        baseline, _ = trained_baseline
        table = run_receiver_ber_sweep(model, baseline, self.CFG, seed=7)
        for record in table.records():
            if record["snr_db"] == 30.0 and record["channel"] == "awgn":
                assert record["ber"] < 1e-3

    def test_low_snr_errors_exceed_high_snr_errors(self, trained_ddpm, trained_baseline):
        model, _ = trained_ddpm
        baseline, _ = trained_baseline
        table = run_receiver_ber_sweep(model, baseline, self.CFG, seed=7)
        ber = {(r["snr_db"], r["channel"], r["receiver"]): r["ber"] for r in table.records()}
        for channel in ("awgn", "laplacian", "hwi"):
            for receiver in ("ddpm", "dnn"):
                assert ber[(-10.0, channel, receiver)] > ber[(30.0, channel, receiver)]

    def test_worker_count_does_not_change_results(self, trained_ddpm, trained_baseline):
        model, _ = trained_ddpm
        baseline, _ = trained_baseline
        serial = run_receiver_ber_sweep(model, baseline, self.CFG, seed=7, workers=1)
        parallel = run_receiver_ber_sweep(model, baseline, self.CFG, seed=7, workers=2)
        assert serial.rows == parallel.rows

    def test_baseline_order_mismatch(self, trained_ddpm, trained_baseline):
        model, _ = trained_ddpm
        baseline, _ = trained_baseline
        with pytest.raises(DimensionError):
            run_receiver_ber_sweep(
                model, baseline, ReceiverExperimentConfig(order=4, symbols_per_snr=100), seed=0
            )


@pytest.mark.slow
class TestShaping:

    def test_high_snr_shaping_is_uniform(self, trained_ddpm):
        model, _ = trained_ddpm
        n = 16_000
        shaped = shape_constellation(model, 16, 60.0, n, np.random.default_rng(41))
        assert shaped.probs.sum() == pytest.approx(1.0)
        sigma = math.sqrt((1 / 16) * (15 / 16) / n)
        assert np.max(np.abs(shaped.probs - 1 / 16)) < 4.0 * sigma
        assert shaped.entropy == pytest.approx(4.0, abs=0.01)

    def test_run_shaping_table(self, trained_ddpm):
        model, _ = trained_ddpm
        cfg = ShapingExperimentConfig(order=16, snr_grid=[0.0, 20.0], shaping_samples=2000)
        shaped, table = run_shaping(model, cfg, seed=3)

        assert [d.snr_db for d in shaped] == [0.0, 20.0]
        assert len(table.rows) == 2 * 16
        for snr in (0.0, 20.0):
            total = sum(r["probability"] for r in table.records() if r["snr_db"] == snr)
            assert total == pytest.approx(1.0)
        assert set(table.metadata["entropy_bits"]) == {"0.0", "20.0"}

    def test_low_snr_lowers_entropy_for_64qam(self):
        model, _ = train_ddpm_on_constellation(
            64,
            ScheduleConfig(),
            DenoiserConfig(hidden_width=32, hidden_layers=2, embed_dim=16),
            TrainingConfig(order=64, n_samples=20_000, batch_size=256, epochs=8),
            seed=3,
        )
        low = shape_constellation(model, 64, -5.0, 20_000, np.random.default_rng(51))
        high = shape_constellation(model, 64, 20.0, 20_000, np.random.default_rng(52))
        assert low.entropy < high.entropy

    def test_mi_sweep_table(self, trained_ddpm, trained_baseline):
        model, _ = trained_ddpm
        baseline, _ = trained_baseline
        cfg = ShapingExperimentConfig(
            order=16, snr_grid=[0.0, 30.0], shaping_samples=2000, symbols_per_snr=5000
        )
        table = run_mi_sweep(model, baseline, cfg, seed=3)

        assert len(table.rows) == 2 * 2 * 2
        for record in table.records():
            assert 0.0 <= record["mutual_information"] <= 4.0 + 1e-9
            assert record["n_symbols"] == 5000
        top = [
            r for r in table.records()
            if r["snr_db"] == 30.0 and r["channel"] == "awgn" and r["arm"] == "dnn-baseline"
        ]
        assert top[0]["mutual_information"] >= 0.95 * 4.0

    def test_ddpm_arm_mi_rises_with_snr(self, trained_ddpm, trained_baseline):
        model, _ = trained_ddpm
        baseline, _ = trained_baseline
        cfg = ShapingExperimentConfig(
            order=16,
            snr_grid=[-5.0, 0.0, 10.0, 20.0, 30.0],
            shaping_samples=5000,
            symbols_per_snr=20_000,
            channels=[ChannelKind.AWGN],
        )
        table = run_mi_sweep(model, baseline, cfg, seed=5)
        ddpm = [r["mutual_information"] for r in table.records() if r["arm"] == "ddpm-shaped"]
        assert len(ddpm) == 5
        assert all(b >= a - 0.05 for a, b in zip(ddpm, ddpm[1:]))

        low = table.metadata["low_snr_mi"]
        assert low["snr_db"] == -5.0
        assert low["reference_bits"] == 1.0
        assert set(low["measured_bits"]["awgn"]) == {"ddpm-shaped", "dnn-baseline"}
        assert low["gap_bits"]["awgn"] == pytest.approx(ddpm[0] - 1.0)


KNOWN_DEVIATION = (
    "DDPM receiver does not yet beat the DNN demapper at -5 dB (DESIGN.md, known deviations)"
)


@pytest.fixture(scope="module")
def low_snr_sweep(default_ddpm, default_baseline):
    model, _ = default_ddpm
    baseline, _ = default_baseline
    cfg = ReceiverExperimentConfig(snr_grid=[-5.0])
    return model, run_receiver_ber_sweep(model, baseline, cfg, seed=2024, workers=3)


@pytest.fixture(scope="module")
def models_64qam():
    model, _ = train_ddpm_on_constellation(
        64, ScheduleConfig(), DenoiserConfig(), TrainingConfig(order=64), seed=2024
    )
    baseline, _ = train_dnn_baseline(BaselineConfig(order=64), 2024)
    return model, baseline


@pytest.mark.slow
class TestReceiverDirection:
    """Default configuration at -5 dB over at least 2e5 bits per cell."""

    def test_improvement_is_recorded(self, low_snr_sweep):
        _, table = low_snr_sweep
        improvement = table.metadata["improvement"]
        assert set(improvement) == {"awgn", "laplacian", "hwi"}
        for result in improvement.values():
            assert result["snr_db"] == -5.0
            assert isinstance(result["significant"], bool)
            relative = result["relative"]
            assert result["flagged"] == (relative is None or relative < 0.10)
        assert all(r["n_bits"] >= 200_000 for r in table.records())

    def test_laplacian_rows_use_the_same_checkpoint(self, low_snr_sweep):
        model, table = low_snr_sweep
        checksums = {r["model_checksum"] for r in table.records() if r["receiver"] == "ddpm"}
        assert checksums == {model.denoiser.checksum()}
        assert table.metadata["ddpm_checksum"] == model.denoiser.checksum()

    @pytest.mark.xfail(strict=False, reason=KNOWN_DEVIATION)
    def test_ddpm_beats_dnn_with_hardware_impairment(self, low_snr_sweep):
        _, table = low_snr_sweep
        assert table.metadata["improvement"]["hwi"]["significant"]

    @pytest.mark.xfail(strict=False, reason=KNOWN_DEVIATION)
    def test_ddpm_beats_dnn_on_laplacian_noise(self, low_snr_sweep):
        _, table = low_snr_sweep
        result = table.metadata["improvement"]["laplacian"]
        assert result["ddpm_ber"] < result["dnn_ber"]


@pytest.mark.slow
class TestShapingDirection:

    def _sweep(self, model, baseline, order):
        cfg = ShapingExperimentConfig(order=order, snr_grid=[-5.0], channels=[ChannelKind.AWGN])
        return run_mi_sweep(model, baseline, cfg, seed=2024)

    def test_reference_levels_recorded(self, default_ddpm, default_baseline, models_64qam):
        for order, model, baseline, reference in (
            (16, default_ddpm[0], default_baseline[0], 1.0),
            (64, models_64qam[0], models_64qam[1], 1.25),
        ):
            low = self._sweep(model, baseline, order).metadata["low_snr_mi"]
            assert low["reference_bits"] == reference
            assert 0.0 <= low["measured_bits"]["awgn"]["ddpm-shaped"] <= math.log2(order)

    @pytest.mark.xfail(strict=False, reason=KNOWN_DEVIATION)
    @pytest.mark.parametrize("order", [16, 64])
    def test_shaped_mi_not_below_dnn(self, order, default_ddpm, default_baseline, models_64qam):
        model, baseline = (
            (default_ddpm[0], default_baseline[0]) if order == 16 else models_64qam
        )
        measured = self._sweep(model, baseline, order).metadata["low_snr_mi"]["measured_bits"]
        assert measured["awgn"]["ddpm-shaped"] >= measured["awgn"]["dnn-baseline"]
