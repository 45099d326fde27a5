import numpy as np
import pytest

from evflex.config import (
    DistributionSpec,
    ReferenceConfig,
    ScriptedStep,
    SimulationConfig,
    load_config,
    save_config,
)
from evflex.scenario import (
    error_metrics,
    generate_reference,
    run_prediction_experiment,
    run_tracking_experiment,
    write_errors_csv,
    write_states_csv,
    write_timeseries_csv,
    write_tracking_csv,
)

from conftest import deterministic_distributions


def small_config(**kw):
    defaults = dict(n_ev=150, horizon_hours=3.0, transition_samples=2000, seed=21)
    defaults.update(kw)
    return SimulationConfig(**defaults)


class TestErrorMetrics:
    def test_identical_series_zero(self):
        s = np.array([1.0, -2.0, 3.0])
        assert error_metrics(s, s) == 0.0

    def test_scaled_series(self):
        base = np.array([100.0, -200.0, 50.0])
        assert error_metrics(1.05 * base, base) == pytest.approx(5.0)

    def test_zero_baseline_raises(self):
        with pytest.raises(ValueError, match="zero"):
            error_metrics(np.ones(3), np.zeros(3))

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError, match="lengths"):
            error_metrics(np.ones(3), np.ones(4))


class TestGenerateReference:
    def test_levels_within_central_band(self):
        n = 1000
        ref = generate_reference(np.full(n, -600.0), np.full(n, 600.0),
                                 dt_hours=1 / 240, period_hours=1.0, seed=5)
        assert ref.min() >= -480.0
        assert ref.max() <= 480.0

    def test_single_period_constant(self):
        n = 241
        ref = generate_reference(np.full(n, -600.0), np.full(n, 600.0),
                                 dt_hours=1 / 240, period_hours=2.0, seed=5)
        assert np.unique(ref).size == 1

    def test_piecewise_constant_with_period(self):
        n = 480
        ref = generate_reference(np.full(n, -600.0), np.full(n, 600.0),
                                 dt_hours=1 / 240, period_hours=1.0, seed=5)
        assert np.unique(ref).size == 2
        assert (ref[:240] == ref[0]).all()

    def test_degenerate_band_holds_forced_level(self):
        n = 100
        ref = generate_reference(np.full(n, -55.0), np.full(n, -55.0),
                                 dt_hours=1 / 240, period_hours=1.0, seed=5)
        np.testing.assert_array_equal(ref, -55.0)

    def test_seeded_determinism(self):
        n = 480
        args = (np.full(n, -600.0), np.full(n, 600.0))
        a = generate_reference(*args, dt_hours=1 / 240, period_hours=0.5, seed=9)
        b = generate_reference(*args, dt_hours=1 / 240, period_hours=0.5, seed=9)
        np.testing.assert_array_equal(a, b)


class TestPredictionExperiment:
    def test_series_lengths_and_bracketing(self):
        config = small_config()
        res = run_prediction_experiment(config)
        k = config.n_steps
        assert res.time_h.size == k + 1
        for vs in res.variants.values():
            assert vs.model_p_kw.size == k + 1
            assert (vs.imm_l_kw <= vs.imm_p_kw + 1e-9).all()
            assert (vs.imm_p_kw <= vs.imm_u_kw + 1e-9).all()
        essm = res.variants["essm"]
        assert (essm.model_l_kw <= essm.model_p_kw + 1e-9).all()
        assert (essm.model_p_kw <= essm.model_u_kw + 1e-9).all()

    def test_model_matches_truth_at_resyncs(self):
        config = small_config()
        res = run_prediction_experiment(config)
        idx = np.arange(0, config.n_steps + 1, config.resync_steps)
        for vs in res.variants.values():
            np.testing.assert_allclose(vs.model_p_kw[idx], vs.imm_p_kw[idx],
                                       rtol=1e-9, atol=1e-6)

    def test_state_vectors_are_distributions(self):
        res = run_prediction_experiment(small_config())
        for vs in res.variants.values():
            occupied = vs.n_connected > 0
            sums = vs.states[occupied].sum(axis=1)
            np.testing.assert_allclose(sums, 1.0, atol=1e-9)
            assert vs.states.min() >= 0.0

    def test_identical_fleet_no_boundaries_variants_agree(self):
        # Fleet (and model mass, up to resync-window diffusion) stays well
        # inside the interior, where the two layouts' dynamics coincide.
        dists = deterministic_distributions(initial=0.2, plug_in=24.0, plug_out=47.9)
        config = small_config(n_ev=50, horizon_hours=1.0, distributions=dists)
        res = run_prediction_experiment(config)
        ssm, essm = res.variants["ssm"], res.variants["essm"]
        np.testing.assert_allclose(ssm.model_p_kw, essm.model_p_kw, atol=1e-3)
        np.testing.assert_allclose(ssm.model_u_kw, essm.model_u_kw, atol=1e-3)
        np.testing.assert_allclose(ssm.model_l_kw, essm.model_l_kw, atol=1e-3)

    def test_never_connected_fleet_all_zero(self):
        dists = deterministic_distributions(plug_in=26.0, plug_out=27.5)
        config = small_config(n_ev=20, horizon_hours=1.0, distributions=dists)
        res = run_prediction_experiment(config)
        for vs in res.variants.values():
            np.testing.assert_array_equal(vs.imm_p_kw, 0.0)
            np.testing.assert_array_equal(vs.model_p_kw, 0.0)
            np.testing.assert_array_equal(vs.n_connected, 0)

    def test_lower_bound_error_ordering(self):
        res = run_prediction_experiment(small_config(horizon_hours=6.0, seed=2))
        rows = {r["variant"]: r for r in res.prediction_errors()}
        assert rows["ssm"]["lower_err_pct"] >= rows["essm"]["lower_err_pct"]
        assert rows["ssm"]["power_err_pct"] == pytest.approx(
            rows["essm"]["power_err_pct"], rel=1e-9)

    def test_measurement_noise_perturbs_recordings(self):
        clean = run_prediction_experiment(small_config(horizon_hours=1.0))
        noisy_config = small_config(horizon_hours=1.0,
                                    measurement_noise_kw=(25.0, 25.0, 25.0))
        noisy = run_prediction_experiment(noisy_config)
        again = run_prediction_experiment(noisy_config)
        diff = noisy.variants["essm"].model_p_kw - clean.variants["essm"].model_p_kw
        assert np.abs(diff).max() > 1.0
        np.testing.assert_array_equal(noisy.variants["essm"].model_p_kw,
                                      again.variants["essm"].model_p_kw)


class TestTrackingExperiment:
    def test_self_reference_needs_no_commands(self):
        config = small_config(seed=3)
        pre = run_prediction_experiment(config)
        reference = pre.variants["essm"].model_p_kw.copy()
        res = run_tracking_experiment(config, reference)
        essm = res.variants["essm"]
        rated = config.n_ev * 6.0
        assert np.abs(essm.achieved_delta_kw).mean() <= 0.01 * rated

    def test_replay_reproduces_online_run(self):
        config = small_config(seed=5, reference=ReferenceConfig(period_hours=1.0,
                                                                central_fraction=0.5))
        online = run_tracking_experiment(config)
        replay = run_tracking_experiment(config, online.reference_kw)
        for name in config.variants:
            np.testing.assert_array_equal(online.variants[name].imm_p_kw,
                                          replay.variants[name].imm_p_kw)
        np.testing.assert_array_equal(online.reference_kw, replay.reference_kw)

    def test_scripted_window_overrides_levels(self):
        scripted = (ScriptedStep("provide", 1.0, 0.5, depth=0.5),)
        config = small_config(seed=5, reference=ReferenceConfig(
            period_hours=3.0, central_fraction=0.5, scripted=scripted))
        res = run_tracking_experiment(config)
        dt = config.dt_hours
        inside = res.reference_kw[int(1.25 / dt)]
        outside = res.reference_kw[int(0.5 / dt)]
        assert inside != outside

    def test_reference_shape_validated(self):
        config = small_config()
        with pytest.raises(ValueError, match="horizon"):
            run_tracking_experiment(config, np.zeros(5))

    def test_tracking_follows_reference(self):
        config = small_config(n_ev=400, horizon_hours=6.0, seed=8,
                              reference=ReferenceConfig(period_hours=1.0,
                                                        central_fraction=0.5))
        res = run_tracking_experiment(config)
        rated = 400 * 6.0
        assert res.tracking_rms_kw("essm") <= 0.05 * rated


class TestCsvSurfaces:
    def test_timeseries_schema_and_determinism(self, tmp_path):
        config = small_config(n_ev=60, horizon_hours=1.0)
        res = run_prediction_experiment(config)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_timeseries_csv(res, p1)
        write_timeseries_csv(run_prediction_experiment(config), p2)
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().splitlines()
        assert lines[0] == ("time_h,reference_kw,imm_p_kw,imm_u_kw,imm_l_kw,"
                            "ssm_p_kw,ssm_u_kw,ssm_l_kw,essm_p_kw,essm_u_kw,essm_l_kw")
        assert len(lines) == config.n_steps + 2

    def test_six_significant_digits(self, tmp_path):
        res = run_prediction_experiment(small_config(n_ev=60, horizon_hours=1.0))
        path = tmp_path / "t.csv"
        write_timeseries_csv(res, path)
        cell = path.read_text().splitlines()[40].split(",")[2]
        assert len(cell.replace("-", "").replace(".", "").replace("e", "").lstrip("0")) <= 7

    def test_errors_csv_layout(self, tmp_path):
        res = run_prediction_experiment(small_config(n_ev=60, horizon_hours=1.0))
        path = tmp_path / "errors.csv"
        write_errors_csv(res.prediction_errors(), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "n_ev,variant,upper_err_pct,lower_err_pct,power_err_pct"
        assert len(lines) == 3

    def test_states_csv_dimensions(self, tmp_path):
        config = small_config(n_ev=60, horizon_hours=1.0)
        res = run_prediction_experiment(config)
        path = tmp_path / "states_essm.csv"
        write_states_csv(res, "essm", path)
        lines = path.read_text().splitlines()
        assert lines[0].split(",")[0] == "time_h"
        assert len(lines[0].split(",")) == 1 + 33
        assert len(lines) == config.n_steps + 2

    def test_tracking_csv(self, tmp_path):
        config = small_config(n_ev=60, horizon_hours=1.0)
        res = run_tracking_experiment(config)
        path = tmp_path / "tracking_essm.csv"
        write_tracking_csv(res, "essm", path)
        lines = path.read_text().splitlines()
        assert lines[0] == "time_h,reference_kw,achieved_kw,model_p_kw,abs_err_kw"
        assert len(lines) == config.n_steps + 2


class TestConfigIO:
    def test_json_roundtrip(self, tmp_path):
        config = small_config(reference=ReferenceConfig(
            period_hours=1.5, central_fraction=0.7,
            scripted=(ScriptedStep("consume", 2.0, 0.5, 0.8),)))
        path = tmp_path / "config.json"
        save_config(config, path)
        loaded = load_config(path)
        assert loaded == config

    def test_grid_constraints_validated(self):
        with pytest.raises(ValueError, match="divide"):
            SimulationConfig(dt_seconds=14.0)
        with pytest.raises(ValueError, match="divide"):
            SimulationConfig(resync_minutes=7.0)

    def test_distribution_spec_validation(self):
        with pytest.raises(ValueError):
            DistributionSpec("uniform", 2.0, 1.0)
        with pytest.raises(ValueError):
            DistributionSpec("triangular", 0.0, 1.0)
