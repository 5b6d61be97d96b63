"""Command-line entry point: SMO runs, the recalibration demo, theory checks,
fixed-set uncertainty fits, and trace aggregation.

Commands exit nonzero on any error and zero only once their declared outputs
exist. Existing output files are never overwritten without --force.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import estimator as est
from .benchmarks import make_oracle
from .core import Dataset, Feature, RngStream, load_config
from .models import Learner, gp_fit
from .smo import read_trace, run_smo


class OutputExistsError(FileExistsError):
    pass


def _ensure_writable(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise OutputExistsError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _max_workers(n_tasks: int) -> int:
    cap = os.environ.get("DEUP_THREADS")
    if cap:
        return max(1, min(int(cap), n_tasks))
    return max(1, min(os.cpu_count() or 1, n_tasks))


# --- run-smo ----------------------------------------------------------------


def _run_one_seed(args):
    cfg, seed = args
    return run_smo(cfg.replace(seed=seed))


def run_smo_command(config_path, seeds, out_dir, force=False) -> list[Path]:
    cfg = load_config(config_path)
    out = Path(out_dir)
    seeds = list(seeds) if seeds else [cfg.seed]
    names = []
    for s in seeds:
        stem = f"{cfg.oracle_name}_{cfg.acquisition.value}_seed{s}"
        names.append(
            (
                s,
                _ensure_writable(out / f"{stem}_trace.csv", force),
                _ensure_writable(out / f"{stem}_summary.json", force),
            )
        )

    jobs = [(cfg, s) for s, _, _ in names]
    workers = _max_workers(len(seeds))
    written = []
    if workers == 1 or len(seeds) == 1:
        traces = [_run_one_seed(j) for j in jobs]
    else:
        # Worker processes: one run is a GIL-heavy loop, so threads do not scale.
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_one_seed, jobs))
    for (seed, csv_path, json_path), trace in zip(names, traces):
        trace.to_csv(csv_path)
        trace.write_summary(json_path)
        written.extend([csv_path, json_path])
        if trace.incomplete:
            print(f"seed {seed}: incomplete run ({trace.failure})", file=sys.stderr)
    return written


# --- demo-fig1 -------------------------------------------------------------

FIG1_GAP = (0.5, 1.5)
FIG1_REGIONS = ((0.0, 0.5), (1.5, 2.0))
FIG1_COLUMNS = (
    "x",
    "f_true",
    "gp1_mean",
    "gp1_std",
    "gp2_mean",
    "gp2_std",
    "deup_eu",
    "true_sq_error",
)


def fig1_truth(x):
    """Smooth sine with a tall bump hidden in the unsampled middle region."""
    x = np.asarray(x, dtype=np.float64)
    return np.sin(2.0 * np.pi * x) + 1.5 * np.exp(-20.0 * (x - 1.0) ** 2)


def demo_fig1(out_dir, seed: int = 0, force: bool = False) -> dict:
    """Recalibration demo on a 1-D ground truth with an unexplored gap.

    GP #1 is fit on points from [0, 0.5] and [1.5, 2] only; five points are
    then acquired at its posterior-variance maxima and GP #2 is fit on the
    union. An error predictor trained on GP #1's observed errors (variance
    feature only) recalibrates the variance into an epistemic-uncertainty
    estimate. The grid CSV compares that estimate and GP #2's collapsed
    variance against GP #1's true squared error.
    """
    out = Path(out_dir)
    grid_path = _ensure_writable(out / f"fig1_grid_seed{seed}.csv", force)
    summary_path = _ensure_writable(out / f"fig1_summary_seed{seed}.json", force)

    root = RngStream(seed, "fig1")
    gen = root.child("train").generator()
    per_region = 10
    xs = np.sort(
        np.concatenate([gen.uniform(lo, hi, per_region) for lo, hi in FIG1_REGIONS])
    )
    train = Dataset.from_arrays(xs[:, None], fig1_truth(xs))

    gp_cfg = {"noise_variance": 1e-8, "n_restarts": 8}
    gp1 = gp_fit(train, gp_cfg, root.child("gp1"))

    # Acquire 5 points at the current posterior-variance maximum, refitting
    # with the same hyperparameters after each (variance-only exploration).
    fixed_cfg = {
        "lengthscale": gp1.lengthscale,
        "signal_variance": gp1.signal_variance,
        "noise_variance": gp1.noise_variance,
        "n_restarts": 0,
    }
    candidates = np.linspace(0.0, 2.0, 1024)[:, None]
    d_aug = train.copy()
    gp_cur = gp1
    acquired = Dataset()
    for _ in range(5):
        _, var = gp_cur.predict_batch(candidates)
        x_new = candidates[int(np.argmax(var))]
        y_new = float(fig1_truth(x_new[0]))
        acquired.append_xy(x_new, y_new)
        d_aug.append_xy(x_new, y_new)
        gp_cur = gp_fit(d_aug, fixed_cfg, root.child("gp-acquire"))

    gp2 = gp_fit(d_aug, gp_cfg, root.child("gp2"))

    layout = (Feature.LOG_VARIANCE,)
    model = est.deup_fixed_train(
        train,
        acquired,
        Learner("gp", gp_cfg),
        layout,
        root.child("deup"),
    )

    grid = np.linspace(0.0, 2.0, 401)[:, None]
    f_true = fig1_truth(grid[:, 0])
    gp1_mean, gp1_var = gp1.predict_batch(grid)
    gp2_mean, gp2_var = gp2.predict_batch(grid)
    deup_eu = model.epistemic_batch(grid)
    true_sq_error = (f_true - gp1_mean) ** 2

    with open(grid_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIG1_COLUMNS)
        for i in range(len(grid)):
            writer.writerow(
                [
                    repr(float(v))
                    for v in (
                        grid[i, 0],
                        f_true[i],
                        gp1_mean[i],
                        np.sqrt(gp1_var[i]),
                        gp2_mean[i],
                        np.sqrt(gp2_var[i]),
                        deup_eu[i],
                        true_sq_error[i],
                    )
                ]
            )

    in_gap = (grid[:, 0] >= FIG1_GAP[0]) & (grid[:, 0] <= FIG1_GAP[1])
    rho_deup = float(spearmanr(deup_eu[in_gap], true_sq_error[in_gap]).statistic)
    rho_gp2 = float(spearmanr(gp2_var[in_gap], true_sq_error[in_gap]).statistic)
    summary = {
        "seed": seed,
        "gap": list(FIG1_GAP),
        "n_train": len(train),
        "n_acquired": len(acquired),
        "spearman_deup_eu": rho_deup,
        "spearman_gp2_variance": rho_gp2,
        "deup_beats_variance": rho_deup > rho_gp2,
        "grid_csv": str(grid_path),
    }
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return summary


# --- check-theory ----------------------------------------------------------


def check_theory_command(out_dir, seed: int = 1, force: bool = False) -> bool:
    from .theory import run_theory_checks

    out = Path(out_dir)
    report_path = _ensure_writable(out / "theory_report.csv", force)
    results = run_theory_checks(seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    with open(report_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "passed", "detail"])
        for r in results:
            writer.writerow([r.name, r.passed, r.detail])
    return all(r.passed for r in results)


# --- fit-uncertainty --------------------------------------------------------


def fit_uncertainty_command(config_path, out_dir, force: bool = False) -> dict:
    """Fixed-training-set fit: train/held-out draw, error dataset export, EU grid."""
    cfg = load_config(config_path)
    out = Path(out_dir)
    du_path = _ensure_writable(out / "error_dataset.csv", force)
    summary_path = _ensure_writable(out / "fit_summary.json", force)

    oracle = make_oracle(cfg.oracle_name, cfg.dimension, noise=cfg.hp("oracle.noise", 0.0))
    root = RngStream(cfg.seed, "fit-uncertainty")
    oracle_gen = root.child("oracle").generator()

    def draw(label, n):
        X = oracle.domain.sample(root.child(label).generator(), n)
        y = np.array([oracle.sample(x, oracle_gen, 1)[0] for x in X])
        return Dataset.from_arrays(X, y)

    train = draw("train", cfg.n_init)
    held_out = draw("oos", cfg.n_init)

    gp_cfg = {
        "kernel": cfg.hp("gp.kernel", "rbf"),
        "n_restarts": cfg.hp("gp.n_restarts", 8),
        "noise_floor": cfg.hp("gp.noise_floor", 1e-6),
    }
    model = est.deup_fixed_train(
        train,
        held_out,
        Learner("gp", gp_cfg),
        cfg.layout(),
        root.child("deup"),
        error_cfg={"error_model": cfg.hp("deup.error_model", "auto")},
        bandwidth=cfg.hp("kde.bandwidth"),
    )

    d_u = Dataset()
    for part in (train, held_out):
        X = part.inputs()
        F = est.build_features_batch(train, X, model.context, model.layout)
        t = est.log_error_target((part.targets() - model.predict_mean_batch(X)) ** 2)
        for i in range(len(part)):
            d_u.append_xy(F[i], t[i])
    est.export_error_dataset(d_u, du_path)

    oos_mse = float(np.mean((held_out.targets() - model.predict_mean_batch(held_out.inputs())) ** 2))
    summary = {
        "config": cfg.as_dict(),
        "n_train": len(train),
        "n_out_of_sample": len(held_out),
        "held_out_mse": oos_mse,
        "error_rows": len(d_u),
        "outputs": [str(du_path), str(summary_path)],
    }

    if cfg.dimension <= 2:
        grid_path = _ensure_writable(out / "eu_grid.csv", force)
        n_side = 201 if cfg.dimension == 1 else 41
        axes = [
            np.linspace(oracle.domain.lower[j], oracle.domain.upper[j], n_side)
            for j in range(cfg.dimension)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        G = np.stack([m.ravel() for m in mesh], axis=1)
        eu = model.epistemic_batch(G)
        mean = model.predict_mean_batch(G)
        truth = oracle.true_batch(G)
        with open(grid_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [f"x_{j}" for j in range(cfg.dimension)] + ["f_hat", "epistemic", "f_true"]
            )
            for i in range(len(G)):
                writer.writerow(
                    [repr(float(v)) for v in G[i]]
                    + [repr(float(mean[i])), repr(float(eu[i])), repr(float(truth[i]))]
                )
        summary["outputs"].append(str(grid_path))

    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return summary


# --- report -----------------------------------------------------------------


def report_command(traces_dir, out_path=None, force: bool = False) -> Path:
    """Aggregate per-mode best-so-far curves (mean and standard error by step)."""
    traces_dir = Path(traces_dir)
    pairs = []
    for summary_path in sorted(traces_dir.glob("*_summary.json")):
        csv_path = Path(str(summary_path).replace("_summary.json", "_trace.csv"))
        if csv_path.exists():
            pairs.append(read_trace(csv_path, summary_path))
    if not pairs:
        raise FileNotFoundError(f"no trace/summary pairs found in {traces_dir}")

    oracles = {p["config"]["oracle_name"] for p in pairs}
    if len(oracles) > 1:
        raise ValueError(
            f"refusing to aggregate traces from different oracles: {sorted(oracles)}"
        )
    shapes = {(p["config"]["n_init"], p["config"]["budget"]) for p in pairs}
    if len(shapes) > 1:
        raise ValueError(f"refusing to aggregate traces with mixed n_init/budget: {sorted(shapes)}")

    out_path = Path(out_path) if out_path else traces_dir / "report.csv"
    _ensure_writable(out_path, force)

    by_mode: dict[str, list] = {}
    for p in pairs:
        curve = [p["init_best"]] + p["best_by_step"]
        by_mode.setdefault(p["config"]["acquisition"], []).append(curve)

    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "step", "mean_best", "stderr", "n_runs"])
        for mode in sorted(by_mode):
            curves = np.array(by_mode[mode])
            mean = curves.mean(axis=0)
            if len(curves) > 1:
                se = curves.std(axis=0, ddof=1) / np.sqrt(len(curves))
            else:
                se = np.zeros(curves.shape[1])
            for step in range(curves.shape[1]):
                writer.writerow(
                    [mode, step, repr(float(mean[step])), repr(float(se[step])), len(curves)]
                )
    return out_path


# --- argument parsing --------------------------------------------------------


def _parse_seeds(text):
    return [int(tok) for tok in text.split(",") if tok.strip()] if text else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deup",
        description="Epistemic-uncertainty-driven sequential model optimization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-smo", help="run one config across seeds, writing traces")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=_parse_seeds, default=None, help="comma-separated, e.g. 0,1,2")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("demo-fig1", help="1-D recalibration demo (grid CSV + summary)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("check-theory", help="uncertainty-decomposition identity checks")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("fit-uncertainty", help="fixed-training-set fit and error-data export")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("report", help="aggregate trace CSVs into per-mode curves")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run-smo":
            written = run_smo_command(args.config, args.seeds, args.out, args.force)
            missing = [p for p in written if not Path(p).exists()]
            return 1 if missing else 0
        if args.command == "demo-fig1":
            summary = demo_fig1(args.out, args.seed, args.force)
            print(
                f"spearman(deup_eu)={summary['spearman_deup_eu']:.3f} "
                f"spearman(gp2_var)={summary['spearman_gp2_variance']:.3f}"
            )
            return 0
        if args.command == "check-theory":
            return 0 if check_theory_command(args.out, args.seed, args.force) else 1
        if args.command == "fit-uncertainty":
            fit_uncertainty_command(args.config, args.out, args.force)
            return 0
        if args.command == "report":
            path = report_command(args.traces, args.out, args.force)
            print(f"wrote {path}")
            return 0
        return 2
    except Exception as exc:  # CLI boundary: report and signal failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
