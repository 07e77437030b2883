"""Experiment orchestration: sweep grids, output files and reproducibility.

A plan expands into (density, mode, epsilon, seed) runs plus optional
model-quality and dependence analyses.  All delimited outputs are written
atomically (temp file then rename) and contain no timestamps; wall-clock
information is confined to run_meta.json, so reruns of the same plan are
byte-identical.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field, replace, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import MetricsSummary, aggregate, canonical_corr, ccdf, estimate_mi
from .errors import ConfigError
from .infer import (
    MlpModel, MlpPredictor, Trace, build_dataset, evaluate_horizons,
    generate_trace, train,
)
from .scenario import ScenarioConfig, substream
from .sim import Engine

METRICS_COLUMNS = [
    "grid_id", "seed", "mode", "epsilon", "density",
    "mean_embb_rate_bps", "std_embb_rate_bps", "embb_satisfaction",
    "urllc_violation", "overhead_reports", "overhead_reduction",
]
LOSS_CCDF_COLUMNS = ["horizon", "loss_value", "ccdf_prob"]
MI_CCA_COLUMNS = ["angular_bins", "mi_nats", "canonical_corr"]
PER_TTI_COLUMNS = ["tti", "vehicle", "slice", "rbs_assigned", "rate_bps", "running_avg_bps"]

MLP_HIDDEN = (128, 128)
# 20 epochs is past the knee on a 12k-TTI trace; horizon orderings are stable
# from about epoch 15 onward while staying inside the evaluation time budget.
TRAIN_EPOCHS = 20
TRAIN_BATCH = 64


@dataclass
class DensitySpec:
    label: str
    num_urllc: int
    num_embb: int
    inter_vehicle_distance_m: float


SPARSE = DensitySpec("sparse", 4, 4, 50.0)
DENSE = DensitySpec("dense", 12, 12, 50.0 * 8 / 24)  # same road, triple occupancy


@dataclass
class ExperimentPlan:
    base: ScenarioConfig
    out_dir: Path
    epsilons: list[float] = field(default_factory=lambda: [0.1, 0.01, 0.001, 0.0001])
    densities: list[DensitySpec] = field(default_factory=lambda: [SPARSE, DENSE])
    modes: list[str] = field(default_factory=lambda: ["perfect", "inferred"])
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    horizons: list[int] = field(default_factory=lambda: [1, 2, 3])
    analysis_bins: list[int] = field(default_factory=lambda: [4, 8, 16, 32, 64])
    sim_ttis: int = 10_000
    train_ttis: int = 12_000
    render_figures: bool = True
    per_tti: bool = False

    def validate(self) -> "ExperimentPlan":
        if not self.epsilons or not self.densities or not self.modes or not self.seeds:
            raise ConfigError("plan sweep lists must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("plan seeds must be distinct")
        for eps in self.epsilons:
            if not (0.0 < eps < 1.0):
                raise ConfigError(f"epsilon {eps} outside (0, 1)")
        for mode in self.modes:
            if mode not in ("perfect", "inferred"):
                raise ConfigError(f"unknown mode {mode!r}")
        if self.sim_ttis < 1 or self.train_ttis < 8:
            raise ConfigError("sim_ttis and train_ttis too small")
        if any(h < 1 for h in self.horizons):
            raise ConfigError("horizons must be >= 1")
        return self


@dataclass
class RunResult:
    grid_id: str
    seed: int
    mode: str
    epsilon: float
    density: str
    summary: MetricsSummary


def _density_config(base: ScenarioConfig, density: DensitySpec, seed: int) -> ScenarioConfig:
    return base.override(
        num_urllc=density.num_urllc, num_embb=density.num_embb,
        inter_vehicle_distance_m=density.inter_vehicle_distance_m, seed=seed,
    )


def train_model_for(
    config: ScenarioConfig,
    horizon: int,
    trace: Trace,
    epochs: int = TRAIN_EPOCHS,
    lr: float = 1e-4,
) -> MlpModel:
    """Train one per-horizon model on a prepared trace.

    Every horizon uses the same training sub-stream, so models for different
    horizons share initialization and shuffle order; horizon comparisons then
    reflect task difficulty, not draw luck.
    """
    dataset = build_dataset(trace, horizon)
    rng = substream(config.seed, "training")
    model = MlpModel.init(
        [config.n_tx, *MLP_HIDDEN, config.n_tx], rng
    )
    train(model, dataset, epochs=epochs, batch_size=TRAIN_BATCH, rng=rng, lr=lr)
    return model


def simulate_one(
    config: ScenarioConfig,
    ttis: int,
    predictor=None,
    collect_records: bool = False,
) -> Engine:
    engine = Engine(config, predictor=predictor, collect_records=collect_records)
    engine.run(ttis)
    return engine


def run(plan: ExperimentPlan) -> dict:
    """Execute a plan; returns the result bundle handed to write_outputs."""
    plan.validate()
    started = time.time()
    rows: list[RunResult] = []
    loss_samples: dict[int, list[np.ndarray]] = {h: [] for h in plan.horizons}
    exact_fractions: dict[int, list[float]] = {h: [] for h in plan.horizons}
    feature_pairs: list[tuple[np.ndarray, np.ndarray]] = []
    per_tti_records = None

    for density in plan.densities:
        study_density = density is plan.densities[0]
        for seed in plan.seeds:
            config = _density_config(plan.base, density, seed)
            trace = None
            models: dict[int, MlpModel] = {}
            if "inferred" in plan.modes or (plan.horizons and study_density):
                trace = generate_trace(config.override(mode="perfect"), plan.train_ttis)
            if study_density and plan.horizons and trace is not None:
                models = {h: train_model_for(config, h, trace) for h in plan.horizons}
                evaluated = evaluate_horizons(models, trace, plan.horizons)
                for h, result in evaluated.items():
                    loss_samples[h].append(result["losses"])
                    exact_fractions[h].append(result["exact_fraction"])
            if "inferred" in plan.modes:
                model = models.get(config.horizon)
                if model is None:
                    model = train_model_for(config, config.horizon, trace)
            else:
                model = None
            for mode in plan.modes:
                predictor = MlpPredictor(model, config.num_rb) if mode == "inferred" else None
                for epsilon in plan.epsilons:
                    run_config = config.override(mode=mode, epsilon=epsilon)
                    want_log = plan.per_tti and per_tti_records is None
                    engine = simulate_one(run_config, plan.sim_ttis, predictor,
                                          collect_records=want_log)
                    if want_log:
                        per_tti_records = engine.records
                    summary = aggregate(engine.tracker, engine.ledger, run_config,
                                        engine.vehicles)
                    rows.append(RunResult(
                        grid_id=f"{density.label}-{mode}-eps{epsilon:g}",
                        seed=seed, mode=mode, epsilon=epsilon,
                        density=density.label, summary=summary,
                    ))
            if study_density and trace is not None and plan.analysis_bins:
                for col, pair in enumerate(trace.pair_ids):
                    feature_pairs.append((
                        trace.features[:, pair, :],
                        trace.features[:, trace.embb_ids[col], :],
                    ))

    mi_rows = _dependence_rows(feature_pairs, plan.analysis_bins)
    return {
        "plan": plan,
        "metrics": rows,
        "loss_samples": {h: (np.concatenate(v) if v else np.array([]))
                         for h, v in loss_samples.items()},
        "exact_fractions": {h: (float(np.mean(v)) if v else None)
                            for h, v in exact_fractions.items()},
        "mi_rows": mi_rows,
        "per_tti_records": per_tti_records,
        "wall_s": time.time() - started,
    }


def _dependence_rows(
    feature_pairs: list[tuple[np.ndarray, np.ndarray]],
    bins_sweep: list[int],
) -> list[tuple[int, float, float]]:
    """Dominant-direction MI and profile canonical correlation per resolution.

    The angular axis is coarsened by max-pooling the per-beam levels into
    `bins` groups; MI is taken between the paired dominant group indices.
    """
    if not feature_pairs or not bins_sweep:
        return []
    x_full = np.concatenate([p[0] for p in feature_pairs])
    y_full = np.concatenate([p[1] for p in feature_pairs])
    n_beams = x_full.shape[1]
    out = []
    for bins in bins_sweep:
        if bins < 2 or n_beams % bins:
            raise ConfigError(f"angular bins {bins} must divide the beam count {n_beams}")
        group = n_beams // bins
        xp = x_full.reshape(-1, bins, group).max(axis=2)
        yp = y_full.reshape(-1, bins, group).max(axis=2)
        mi = estimate_mi(np.argmax(xp, axis=1), np.argmax(yp, axis=1), bins)
        rho = canonical_corr(xp.astype(float), yp.astype(float))
        out.append((bins, mi, rho))
    return out


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    tmp.write_text(text)
    tmp.replace(path)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def _csv_text(columns: list[str], rows: list[list]) -> str:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_outputs(results: dict, per_tti_records=None) -> dict[str, Path]:
    plan: ExperimentPlan = results["plan"]
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    metric_rows = [[
        r.grid_id, r.seed, r.mode, r.epsilon, r.density,
        r.summary.mean_embb_rate_bps, r.summary.std_embb_rate_bps,
        r.summary.embb_satisfaction, r.summary.urllc_violation,
        r.summary.overhead_reports, r.summary.overhead_reduction,
    ] for r in results["metrics"]]
    path = out / "metrics.csv"
    atomic_write_text(path, _csv_text(METRICS_COLUMNS, metric_rows))
    written["metrics"] = path

    loss_rows = []
    for h in sorted(results["loss_samples"]):
        samples = results["loss_samples"][h]
        if len(samples) == 0:
            continue
        curve = ccdf(samples)
        for value, prob in zip(curve.values, curve.probs):
            loss_rows.append([h, value, prob])
    path = out / "loss_ccdf.csv"
    atomic_write_text(path, _csv_text(LOSS_CCDF_COLUMNS, loss_rows))
    written["loss_ccdf"] = path

    path = out / "mi_cca.csv"
    atomic_write_text(path, _csv_text(MI_CCA_COLUMNS, results["mi_rows"]))
    written["mi_cca"] = path

    if per_tti_records is not None:
        rows = [[r.tti, r.vehicle, r.slice, r.rbs_assigned, r.rate_bps, r.running_avg_bps]
                for r in per_tti_records]
        path = out / "per_tti.csv"
        atomic_write_text(path, _csv_text(PER_TTI_COLUMNS, rows))
        written["per_tti"] = path

    meta = {
        "version": __version__,
        "command": results.get("command", "all"),
        "config": asdict(plan.base),
        "seeds": plan.seeds,
        "epsilons": plan.epsilons,
        "modes": plan.modes,
        "densities": [asdict(d) for d in plan.densities],
        "horizons": plan.horizons,
        "sim_ttis": plan.sim_ttis,
        "train_ttis": plan.train_ttis,
        "exact_fractions": results.get("exact_fractions", {}),
        "wall_s": results.get("wall_s"),
        "finished_unix": time.time(),
    }
    path = out / "run_meta.json"
    atomic_write_text(path, json.dumps(meta, indent=2, default=str) + "\n")
    written["run_meta"] = path

    if plan.render_figures:
        from . import plots

        written.update(plots.render_all(out))
    return written
