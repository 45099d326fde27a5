"""Experiment orchestration: 24 h prediction and tracking loops, reference
generation, error metrics and CSV surfaces.

The prediction loop runs the fleet uncontrolled and propagates every
configured model variant alongside it (recursion each step with the observed
plug-in/out churn, hard resync from telemetry every resync period). The
tracking loop closes the loop per variant: each step the controller plans a
dispatch against the model's predicted pre-control state, broadcasts
switching probabilities, and the fleet actuates them; variants drive clones
of the same fleet (same seed, same per-step draws) against the same reference
so their tracking is directly comparable.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregate import ESSM, SSM, AggregateModel, StateLayout
from .config import ScriptedStep, SimulationConfig
from .control import plan_dispatch, to_switching_probabilities
from .fleet import Fleet, sample_fleet
from .imm import imm_flexibility

logger = logging.getLogger(__name__)

_STREAM_REFERENCE = 7
_STREAM_NOISE = 11


def error_metrics(model_series, baseline_series) -> float:
    """Aggregate L1 error ratio in percent:
    100 * sum|model - baseline| / sum|baseline|."""
    model = np.asarray(model_series, dtype=float)
    base = np.asarray(baseline_series, dtype=float)
    if model.shape != base.shape:
        raise ValueError("series lengths differ")
    denom = np.abs(base).sum()
    if denom == 0.0:
        raise ValueError("baseline series is identically zero")
    return float(100.0 * np.abs(model - base).sum() / denom)


def _draw_level(rng: np.random.Generator, p_l: float, p_u: float,
                central_fraction: float) -> float:
    """Uniform draw from the central fraction of [p_l, p_u]; a degenerate
    band holds its forced level."""
    if p_u <= p_l:
        return p_l
    center = 0.5 * (p_l + p_u)
    half = 0.5 * central_fraction * (p_u - p_l)
    return float(rng.uniform(center - half, center + half))


def generate_reference(p_l_series, p_u_series, dt_hours: float, period_hours: float,
                       seed: int, central_fraction: float = 0.8) -> np.ndarray:
    """Piecewise-constant reference over an envelope series: a fresh level is
    drawn at every period boundary from the instantaneous band and held."""
    p_l = np.asarray(p_l_series, dtype=float)
    p_u = np.asarray(p_u_series, dtype=float)
    if p_l.shape != p_u.shape or p_l.ndim != 1:
        raise ValueError("envelope series must be equal-length 1-d arrays")
    if period_hours <= 0 or dt_hours <= 0:
        raise ValueError("period and dt must be > 0")
    period_steps = max(1, round(period_hours / dt_hours))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_REFERENCE,)))
    ref = np.empty_like(p_l)
    level = 0.0
    for k in range(p_l.size):
        if k % period_steps == 0:
            level = _draw_level(rng, p_l[k], p_u[k], central_fraction)
        ref[k] = level
    return ref


@dataclass
class VariantSeries:
    """Per-variant time series of one run (model outputs plus the ground
    truth of the fleet that run drove)."""

    variant: str
    model_p_kw: np.ndarray
    model_u_kw: np.ndarray
    model_l_kw: np.ndarray
    imm_p_kw: np.ndarray
    imm_u_kw: np.ndarray
    imm_l_kw: np.ndarray
    states: np.ndarray
    n_connected: np.ndarray
    achieved_delta_kw: np.ndarray
    saturated: np.ndarray


@dataclass
class RunResult:
    kind: str
    config: SimulationConfig
    time_h: np.ndarray
    reference_kw: np.ndarray
    variants: dict[str, VariantSeries]

    def prediction_errors(self) -> list[dict]:
        rows = []
        for name in self.config.variants:
            vs = self.variants[name]
            rows.append({
                "n_ev": self.config.n_ev,
                "variant": name,
                "upper_err_pct": error_metrics(vs.model_u_kw, vs.imm_u_kw),
                "lower_err_pct": error_metrics(vs.model_l_kw, vs.imm_l_kw),
                "power_err_pct": error_metrics(vs.model_p_kw, vs.imm_p_kw),
            })
        return rows

    def tracking_rms_kw(self, variant: str) -> float:
        vs = self.variants[variant]
        err = vs.imm_p_kw - self.reference_kw
        return float(np.sqrt(np.mean(err ** 2)))


def _build_models(config: SimulationConfig) -> dict[str, AggregateModel]:
    models = {}
    for name in config.variants:
        layout = StateLayout(config.n_intervals, name,
                             config.distributions.soc_min, config.distributions.soc_max)
        models[name] = AggregateModel.from_distributions(
            layout, config.distributions, config.dt_hours,
            n_samples=config.transition_samples, seed=config.seed)
    return models


def _noise_rng_or_none(config: SimulationConfig, variant_idx: int):
    std = np.asarray(config.measurement_noise_kw, dtype=float)
    if not std.any():
        return None, None
    rng = np.random.default_rng(np.random.SeedSequence(
        entropy=config.seed, spawn_key=(_STREAM_NOISE, variant_idx)))
    return std, rng


def run_prediction_experiment(config: SimulationConfig) -> RunResult:
    """Uncontrolled 24 h run: every vehicle charges until full or gone, every
    variant's model predicts alongside from telemetry."""
    k_steps = config.n_steps
    dt_h = config.dt_hours
    d = config.distributions
    fleet = Fleet(sample_fleet(d, config.n_ev, config.seed), dt_h, config.seed)
    models = _build_models(config)

    time_h = np.arange(k_steps + 1) * dt_h
    series = {
        name: VariantSeries(
            variant=name,
            model_p_kw=np.zeros(k_steps + 1), model_u_kw=np.zeros(k_steps + 1),
            model_l_kw=np.zeros(k_steps + 1), imm_p_kw=np.zeros(k_steps + 1),
            imm_u_kw=np.zeros(k_steps + 1), imm_l_kw=np.zeros(k_steps + 1),
            states=np.zeros((k_steps + 1, models[name].layout.dimension)),
            n_connected=np.zeros(k_steps + 1, dtype=np.int64),
            achieved_delta_kw=np.zeros(k_steps), saturated=np.zeros(k_steps, dtype=bool),
        )
        for name in config.variants
    }
    noise = {name: _noise_rng_or_none(config, i) for i, name in enumerate(config.variants)}

    snap = fleet.snapshot()
    for model in models.values():
        model.resync(snap)
    _record(series, models, snap, d, 0, noise)

    for k in range(k_steps):
        snap = fleet.step(None)
        for model in models.values():
            model.advance(snap)
        if (k + 1) % config.resync_steps == 0:
            for model in models.values():
                model.resync(snap)
        _record(series, models, snap, d, k + 1, noise)

    return RunResult(
        kind="prediction",
        config=config,
        time_h=time_h,
        reference_kw=np.zeros(k_steps + 1),
        variants=series,
    )


def _record(series, models, snap, distributions, idx, noise) -> None:
    env_true = imm_flexibility(snap, distributions.soc_min, distributions.soc_max)
    for name, model in models.items():
        vs = series[name]
        std, rng = noise[name]
        env = model.envelope(noise_std_kw=std, rng=rng)
        vs.model_p_kw[idx] = env.p_ev_kw
        vs.model_u_kw[idx] = env.p_u_kw
        vs.model_l_kw[idx] = env.p_l_kw
        vs.imm_p_kw[idx] = env_true.p_ev_kw
        vs.imm_u_kw[idx] = env_true.p_u_kw
        vs.imm_l_kw[idx] = env_true.p_l_kw
        vs.states[idx] = model.state.x
        vs.n_connected[idx] = model.state.n_ev_connected


@dataclass
class _ScriptedWindow:
    start_step: int
    end_step: int
    kind: str
    depth: float
    level: float = np.nan


def _scripted_windows(scripted: tuple[ScriptedStep, ...], dt_h: float,
                      k_steps: int) -> list[_ScriptedWindow]:
    windows = []
    for s in scripted:
        start = round(s.start_h / dt_h)
        end = min(k_steps, round((s.start_h + s.duration_h) / dt_h))
        if start < end:
            windows.append(_ScriptedWindow(start, end, s.kind, s.depth))
    return sorted(windows, key=lambda w: w.start_step)


def _run_tracking_single(config: SimulationConfig, variant: str,
                         reference: np.ndarray | None, variant_idx: int):
    """Drive one fleet with one variant's controller. When no reference is
    given, levels are drawn online from the live model envelope (plus the
    configured scripted windows) and the generated series is returned."""
    k_steps = config.n_steps
    dt_h = config.dt_hours
    d = config.distributions
    fleet = Fleet(sample_fleet(d, config.n_ev, config.seed), dt_h, config.seed)
    layout = StateLayout(config.n_intervals, variant, d.soc_min, d.soc_max)
    model = AggregateModel.from_distributions(
        layout, d, dt_h, n_samples=config.transition_samples, seed=config.seed)

    vs = VariantSeries(
        variant=variant,
        model_p_kw=np.zeros(k_steps + 1), model_u_kw=np.zeros(k_steps + 1),
        model_l_kw=np.zeros(k_steps + 1), imm_p_kw=np.zeros(k_steps + 1),
        imm_u_kw=np.zeros(k_steps + 1), imm_l_kw=np.zeros(k_steps + 1),
        states=np.zeros((k_steps + 1, layout.dimension)),
        n_connected=np.zeros(k_steps + 1, dtype=np.int64),
        achieved_delta_kw=np.zeros(k_steps), saturated=np.zeros(k_steps, dtype=bool),
    )
    noise = {variant: _noise_rng_or_none(config, variant_idx)}
    series = {variant: vs}
    models = {variant: model}

    online = reference is None
    ref_out = np.zeros(k_steps + 1)
    if online:
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=config.seed, spawn_key=(_STREAM_REFERENCE,)))
        windows = _scripted_windows(config.reference.scripted, dt_h, k_steps)
        period_steps = max(1, round(config.reference.period_hours / dt_h))
        held = np.nan  # first level drawn at the first step outside a window
    else:
        ref_out[:] = reference

    snap = fleet.snapshot()
    model.resync(snap)
    _record(series, models, snap, d, 0, noise)

    for k in range(k_steps):
        if online:
            env = model.envelope()
            window = next((w for w in windows
                           if w.start_step <= k < w.end_step), None)
            if window is None:
                if k % period_steps == 0 or np.isnan(held):
                    held = _draw_level(rng, env.p_l_kw, env.p_u_kw,
                                       config.reference.central_fraction)
                level = held
            else:
                if k == window.start_step:
                    top = env.p_u_kw if window.kind == "provide" else env.p_l_kw
                    window.level = env.p_ev_kw + window.depth * (top - env.p_ev_kw)
                level = window.level
            ref_out[k + 1] = level
            if k == 0:
                ref_out[0] = level
        else:
            level = ref_out[k + 1]

        pre = model.pre_control()
        predicted_p = float((model.mats.C @ pre.x)[0])
        plan = plan_dispatch(level - predicted_p, pre, model.mats)
        command = to_switching_probabilities(plan, pre, issue_time_h=k * dt_h)
        vs.achieved_delta_kw[k] = plan.achieved_delta_kw
        vs.saturated[k] = plan.saturated

        snap = fleet.step(command)
        model.advance(snap, u=plan.expected_u, pre=pre)
        if (k + 1) % config.resync_steps == 0:
            model.resync(snap)
        _record(series, models, snap, d, k + 1, noise)

    return vs, ref_out


def run_tracking_experiment(config: SimulationConfig,
                            reference: np.ndarray | None = None) -> RunResult:
    """Closed-loop tracking for every configured variant against one shared
    reference. Without an explicit reference, the extended-variant run
    generates it online from its live envelope and the others replay it."""
    k_steps = config.n_steps
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        if reference.shape != (k_steps + 1,):
            raise ValueError("reference must cover the horizon (n_steps + 1 samples)")
    order = list(config.variants)
    if reference is None:
        lead = ESSM if ESSM in order else order[0]
        order.remove(lead)
        order.insert(0, lead)

    series: dict[str, VariantSeries] = {}
    ref = reference
    for name in order:
        idx = config.variants.index(name)
        vs, ref_used = _run_tracking_single(config, name, ref, idx)
        series[name] = vs
        if ref is None:
            ref = ref_used
        logger.info("tracking run done: variant=%s rms=%.1f kW", name,
                    float(np.sqrt(np.mean((vs.imm_p_kw - ref) ** 2))))

    return RunResult(
        kind="tracking",
        config=config,
        time_h=np.arange(k_steps + 1) * config.dt_hours,
        reference_kw=ref,
        variants={name: series[name] for name in config.variants},
    )


def sweep_prediction(config: SimulationConfig, n_ev_list) -> list[dict]:
    """Prediction-error table over fleet sizes."""
    rows = []
    for n in n_ev_list:
        result = run_prediction_experiment(config.with_overrides(n_ev=int(n)))
        rows.extend(result.prediction_errors())
    return rows


# ---------------------------------------------------------------------------
# CSV surfaces: fixed-format, 6 significant digits.

def _fmt(v) -> str:
    return f"{float(v):.6g}"


def write_timeseries_csv(result: RunResult, path: str | Path) -> None:
    """time_h, reference_kw, ground truth triple, then one model triple per
    variant. For tracking runs the ground-truth columns belong to the
    extended-variant-driven fleet when present (each variant drives its own
    clone); variants not run are filled with nan."""
    names = (SSM, ESSM)
    truth_from = next((v for v in (ESSM, SSM) if v in result.variants), None)
    n = result.time_h.size
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["time_h", "reference_kw", "imm_p_kw", "imm_u_kw", "imm_l_kw"]
        for name in names:
            header += [f"{name}_p_kw", f"{name}_u_kw", f"{name}_l_kw"]
        writer.writerow(header)
        truth = result.variants.get(truth_from)
        for i in range(n):
            row = [_fmt(result.time_h[i]), _fmt(result.reference_kw[i]),
                   _fmt(truth.imm_p_kw[i]), _fmt(truth.imm_u_kw[i]), _fmt(truth.imm_l_kw[i])]
            for name in names:
                vs = result.variants.get(name)
                if vs is None:
                    row += ["nan", "nan", "nan"]
                else:
                    row += [_fmt(vs.model_p_kw[i]), _fmt(vs.model_u_kw[i]),
                            _fmt(vs.model_l_kw[i])]
            writer.writerow(row)


def write_errors_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_ev", "variant", "upper_err_pct", "lower_err_pct",
                         "power_err_pct"])
        for row in rows:
            writer.writerow([row["n_ev"], row["variant"],
                             _fmt(row["upper_err_pct"]), _fmt(row["lower_err_pct"]),
                             _fmt(row["power_err_pct"])])


def write_states_csv(result: RunResult, variant: str, path: str | Path) -> None:
    vs = result.variants[variant]
    dim = vs.states.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_h"] + [f"x_{j + 1}" for j in range(dim)])
        for i in range(result.time_h.size):
            writer.writerow([_fmt(result.time_h[i])] + [_fmt(v) for v in vs.states[i]])


def write_tracking_csv(result: RunResult, variant: str, path: str | Path) -> None:
    vs = result.variants[variant]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_h", "reference_kw", "achieved_kw", "model_p_kw",
                         "abs_err_kw"])
        for i in range(result.time_h.size):
            err = abs(vs.imm_p_kw[i] - result.reference_kw[i])
            writer.writerow([_fmt(result.time_h[i]), _fmt(result.reference_kw[i]),
                             _fmt(vs.imm_p_kw[i]), _fmt(vs.model_p_kw[i]), _fmt(err)])
