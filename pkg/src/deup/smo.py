"""Sequential model optimization: init design, acquisition loop, trace output.

A run is a pure function of its ExperimentConfig: the initial design, oracle
draws, model fits and candidate searches all pull from named streams of the
config seed, so methods compared under one seed share the same initial points
and reruns are bitwise identical (wall-clock fields aside).
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import estimator as est
from .acquisition import AcquisitionContext, AcquisitionSpec, argmax_acquisition, score
from .benchmarks import make_oracle
from .core import (
    Acquisition,
    AleatoricMode,
    Dataset,
    ExperimentConfig,
    NumericsError,
    RngStream,
)
from .models import Learner, gp_fit


@dataclass
class StepRecord:
    step: int
    x: np.ndarray
    y: float
    best: float
    acq_value: float
    epistemic: float
    ms: float = field(compare=False)

    def __eq__(self, other):
        return (
            self.step == other.step
            and np.array_equal(self.x, other.x)
            and self.y == other.y
            and self.best == other.best
            and (self.acq_value == other.acq_value or (np.isnan(self.acq_value) and np.isnan(other.acq_value)))
            and (self.epistemic == other.epistemic or (np.isnan(self.epistemic) and np.isnan(other.epistemic)))
        )


@dataclass
class RunTrace:
    config: ExperimentConfig
    init_X: np.ndarray
    init_y: np.ndarray
    records: list = field(default_factory=list)
    incomplete: bool = False
    failure: str | None = None

    @property
    def init_best(self) -> float:
        return float(np.max(self.init_y))

    @property
    def final_best(self) -> float:
        return self.records[-1].best if self.records else self.init_best

    @property
    def evaluations(self) -> int:
        return len(self.init_y) + len(self.records)

    def to_csv(self, path) -> None:
        d = self.config.dimension
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["step"] + [f"x_{i}" for i in range(d)] + ["y", "best", "acq_value", "epistemic", "ms"]
            )
            for r in self.records:
                writer.writerow(
                    [r.step]
                    + [repr(float(v)) for v in r.x]
                    + [repr(r.y), repr(r.best), repr(r.acq_value), repr(r.epistemic), f"{r.ms:.3f}"]
                )

    def summary_dict(self) -> dict:
        return {
            "config": self.config.as_dict(),
            "init_best": self.init_best,
            "final_best": self.final_best,
            "evaluations": self.evaluations,
            "n_records": len(self.records),
            "incomplete": self.incomplete,
            "failure": self.failure,
        }

    def write_summary(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary_dict(), fh, indent=2)


def best_so_far(trace: RunTrace) -> list[float]:
    """Running maximum over all oracle values, starting from the init design."""
    out = [trace.init_best]
    for r in trace.records:
        out.append(max(out[-1], r.y))
    return out


def _gp_cfg(cfg: ExperimentConfig) -> dict:
    out = {
        "kernel": cfg.hp("gp.kernel", "rbf"),
        "n_restarts": cfg.hp("gp.n_restarts", 8),
        "noise_floor": cfg.hp("gp.noise_floor", 1e-6),
        "max_sweeps": cfg.hp("gp.max_sweeps", 12),
    }
    if cfg.hp("gp.noise_variance") is not None:
        out["noise_variance"] = cfg.hp("gp.noise_variance")
    return out


def _error_cfg(cfg: ExperimentConfig) -> dict:
    return {
        "error_model": cfg.hp("deup.error_model", "auto"),
        "n_restarts": cfg.hp("deup.error_gp_restarts", 4),
        "noise_floor": cfg.hp("gp.noise_floor", 1e-6),
    }


def _mlp_cfg(cfg: ExperimentConfig) -> dict:
    return {
        "epochs": cfg.hp("mlp.epochs", 400),
        "learning_rate": cfg.hp("mlp.learning_rate", 1e-3),
        "batch_size": cfg.hp("mlp.batch_size", 256),
        "hidden_layers": cfg.hp("mlp.hidden_layers", 3),
        "hidden_units": cfg.hp("mlp.hidden_units", 128),
    }


def _build_aleatoric(cfg, oracle, d_init, rng) -> est.AleatoricEstimator:
    mode = cfg.aleatoric_mode
    if mode is AleatoricMode.ZERO:
        return est.zero_aleatoric()
    if mode is AleatoricMode.KNOWN:
        sigma = float(cfg.hp("oracle.noise", 0.0))
        return est.known_aleatoric(lambda X: np.full(len(np.atleast_2d(X)), sigma**2))
    # REPLICATES: groups drawn at the init points, fit once; the extra draws
    # per point are not counted against the acquisition budget (see README).
    k = int(cfg.hp("deup.replicates_k", 5))
    groups = []
    for i, ex in enumerate(d_init):
        ys = oracle.sample(ex.x, rng.child(f"replicates-{i}"), replicates=k)
        groups.append((ex.x, ys))
    regressor = Learner("gp", _gp_cfg(cfg))
    return est.estimate_aleatoric_from_replicates(groups, regressor, rng.child("aleatoric-fit"))


def run_smo(cfg: ExperimentConfig) -> RunTrace:
    """Run one optimization and return its trace.

    The budget counts every oracle call including the n_init initial points,
    so exactly budget - n_init acquisition records are produced. Model-fit
    failures flag the trace incomplete instead of raising.
    """
    cfg.validate()
    oracle = make_oracle(cfg.oracle_name, cfg.dimension, noise=cfg.hp("oracle.noise", 0.0))
    root = RngStream(cfg.seed, "smo")

    # Mode-independent labels: every acquisition mode under one seed shares
    # these draws and therefore the same initial design.
    init_gen = root.child("init-design").generator()
    oracle_gen = root.child("oracle").generator()

    X_init = oracle.domain.sample(init_gen, cfg.n_init)
    y_init = np.array([oracle.sample(x, oracle_gen, 1)[0] for x in X_init])
    d = Dataset.from_arrays(X_init, y_init)

    trace = RunTrace(config=cfg, init_X=X_init, init_y=y_init)
    spec = AcquisitionSpec(
        kind=cfg.acquisition,
        beta=float(cfg.hp("smo.beta", 2.0)),
        xi=float(cfg.hp("smo.xi", 0.01)),
        n_candidates=int(cfg.hp("smo.n_candidates", 2048)),
        n_refine=int(cfg.hp("smo.n_refine", 5)),
    )
    n_steps = cfg.budget - cfg.n_init
    best = trace.init_best
    mode = cfg.acquisition
    layout = cfg.layout()

    state = None
    gp = None
    try:
        if mode.uses_error_model:
            main_kind = str(cfg.hp("deup.main_model", "gp")).lower()
            learner = Learner(main_kind, _gp_cfg(cfg) if main_kind == "gp" else _mlp_cfg(cfg))
            n_pretrain = cfg.hp("deup.n_pretrain")
            if n_pretrain is None:
                n_pretrain = 4 * cfg.n_init
            aleatoric = _build_aleatoric(cfg, oracle, d, root.child("aleatoric"))
            state = est.deup_init_state(
                d,
                learner,
                layout,
                root.child("deup"),
                k=int(cfg.hp("deup.cv_folds", 2)),
                n_pretrain=int(n_pretrain),
                aleatoric=aleatoric,
                error_cfg=_error_cfg(cfg),
                bandwidth=cfg.hp("kde.bandwidth"),
            )
        elif mode in (Acquisition.EI, Acquisition.UCB):
            gp = gp_fit(d, _gp_cfg(cfg), root.child("fit-0"))

        for t in range(1, n_steps + 1):
            t0 = time.perf_counter()
            if mode is Acquisition.RANDOM:
                ctx = AcquisitionContext(best=best)
                x = argmax_acquisition(spec, oracle.domain, ctx, root.child(f"acq-{t}"))
                acq_value = float("nan")
                eu = float("nan")
            elif mode.uses_error_model:
                ctx = AcquisitionContext(best=best, model=state.model)
                x = argmax_acquisition(spec, oracle.domain, ctx, root.child(f"acq-{t}"))
                acq_value = score(spec, x, ctx)
                eu = state.model.epistemic(x)
            else:
                ctx = AcquisitionContext(best=best, predictor=gp)
                x = argmax_acquisition(spec, oracle.domain, ctx, root.child(f"acq-{t}"))
                acq_value = score(spec, x, ctx)
                eu = gp.predict(x)[1]

            y = float(oracle.sample(x, oracle_gen, 1)[0])

            if mode.uses_error_model:
                state = est.deup_interactive_step(state, x, y)
            elif mode in (Acquisition.EI, Acquisition.UCB):
                d.append_xy(x, y)
                gp = gp_fit(d, _gp_cfg(cfg), root.child(f"fit-{t}"))
            else:
                d.append_xy(x, y)

            best = max(best, y)
            trace.records.append(
                StepRecord(
                    step=t,
                    x=np.asarray(x, dtype=np.float64),
                    y=y,
                    best=best,
                    acq_value=acq_value,
                    epistemic=eu,
                    ms=(time.perf_counter() - t0) * 1e3,
                )
            )
    except NumericsError as exc:
        trace.incomplete = True
        trace.failure = str(exc)
    return trace


def read_trace(csv_path, summary_path) -> dict:
    """Load one exported trace; returns summary dict plus per-step best values."""
    with open(summary_path, encoding="utf-8") as fh:
        summary = json.load(fh)
    bests, ys = [], []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            bests.append(float(row["best"]))
            ys.append(float(row["y"]))
    summary["best_by_step"] = bests
    summary["y_by_step"] = ys
    return summary
