"""Command-line front end.

Verbs: `optimize` (one channel instance through the alternating solver),
`sweep` (Monte-Carlo grid with per-trial CSV, summary JSON, and plots), and
`validate` (config schema check only). Exit codes: 0 success, 1 runtime
failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .channel import generate_channel_set, generate_topology
from .config import ExperimentConfig, build_manifest
from .errors import AirFcError, ConfigError, SolverDiverged
from .evaluate import (DigitalBaseline, GridPoint, SweepResult,
                       evaluate_ota_accuracy, imitation_nmse,
                       make_synthetic_task, monte_carlo_sweep, train_digital_fc,
                       trial_seed_key)
from .serialization import (load_weights, matrix_to_json, save_channel_set,
                            save_weights, write_csv)
from .solver import AoTrace, run_ao
from .system import effective_channel, max_power_ratio

RESULTS_HEADER = [
    "point", "n_groups", "relays_per_group", "p_relay_w", "d_max_m",
    "direct_link", "trial", "seed", "nmse", "accuracy", "imitation_error",
    "noise_penalty", "objective_total", "iterations", "max_power_ratio",
    "termination", "error",
]

TRACE_HEADER = ["iteration", "imitation_error", "noise_penalty", "total",
                "max_violation"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airfc",
        description="Imitate a fully-connected layer over a multi-hop "
                    "amplify-and-forward relay channel.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_run_flags: bool):
        p.add_argument("--config", required=True, metavar="PATH",
                       help="JSON experiment configuration")
        if with_run_flags:
            p.add_argument("--out", metavar="DIR",
                           help="output directory (overrides output_dir)")
            p.add_argument("--workers", type=int, metavar="N",
                           help="parallel trial workers (overrides workers)")
            p.add_argument("--seed", type=int, metavar="U64",
                           help="base seed (overrides seed)")
            p.add_argument("--no-plots", action="store_true",
                           help="skip plot files")

    add_common(sub.add_parser(
        "optimize", help="optimize one channel realization"), True)
    add_common(sub.add_parser(
        "sweep", help="Monte-Carlo sweep over the configured grid"), True)
    add_common(sub.add_parser(
        "validate", help="validate a configuration file and exit"), False)
    return parser


def _target_and_task(config: ExperimentConfig):
    """Build the target layer: external weights file or trained synthetic FC."""
    task_cfg = config.data["task"]
    task = make_synthetic_task(
        n_features=config.n_streams, n_classes=task_cfg["n_classes"],
        samples=task_cfg["samples"], spread=task_cfg["spread"],
        seed=task_cfg["seed"], test_fraction=task_cfg["test_fraction"])
    if task_cfg["weights_file"] is not None:
        try:
            w, b, acc = load_weights(task_cfg["weights_file"])
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"task.weights_file: cannot load: {exc}") from exc
        except AirFcError as exc:
            raise ConfigError(f"task.weights_file: {exc}") from exc
        if w.shape != (config.n_streams, config.n_streams):
            raise ConfigError(
                f"task.weights_file: weight shape {w.shape} does not match "
                f"system.n_streams={config.n_streams}")
        if acc is None:
            from .evaluate import decode_classes
            phase = float(np.angle(np.trace(w)))
            outputs = w @ task.x_test + b[:, None]
            preds = decode_classes(outputs, task.n_classes, phase)
            acc = float(np.mean(preds == task.labels_test))
        baseline = DigitalBaseline(w=w, b=b, reported_accuracy=acc)
    else:
        baseline = train_digital_fc(task)
    return task, baseline


def _json_num(value):
    value = float(value)
    return value if math.isfinite(value) else None


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False, sort_keys=True)
        fh.write("\n")


def _trace_rows(trace: AoTrace) -> list[list]:
    return [[i, obj.imitation_error, obj.noise_penalty, obj.total, viol]
            for i, (obj, viol) in enumerate(
                zip(trace.objectives, trace.max_violations))]


def _matplotlib():
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "airfc"
    import matplotlib.pyplot as plt
    return plt


def _plot_convergence(trace: AoTrace, path: str) -> None:
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(6, 4))
    totals = trace.totals
    ax.semilogy(range(len(totals)), np.maximum(totals, 1e-300), marker="o",
                markersize=3)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective total")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _series_label(point: GridPoint, varying: set[str]) -> str:
    parts = [f"L={point.n_groups}"]
    if "p_relay_w" in varying:
        parts.append(f"P={point.p_relay_w:g} W")
    if "d_max_m" in varying:
        parts.append(f"D={point.d_max_m:g} m")
    if "direct_link" in varying:
        parts.append("direct on" if point.direct_link else "direct off")
    return ", ".join(parts)


def _plot_sweep(results: list[SweepResult], digital_accuracy: float,
                acc_path: str, nmse_path: str) -> None:
    plt = _matplotlib()
    varying = set()
    for name in ("p_relay_w", "d_max_m", "direct_link"):
        if len({getattr(r.point, name) for r in results}) > 1:
            varying.add(name)

    series: dict[tuple, list[SweepResult]] = {}
    for res in results:
        key = (res.point.n_groups, res.point.p_relay_w, res.point.d_max_m,
               res.point.direct_link)
        series.setdefault(key, []).append(res)

    for metric, std_metric, path, ylabel, logy in (
            ("mean_accuracy", "std_accuracy", acc_path,
             "classification accuracy", False),
            ("mean_nmse", "std_nmse", nmse_path, "imitation NMSE", True)):
        fig, ax = plt.subplots(figsize=(6.5, 4.5))
        for key in sorted(series):
            points = sorted(series[key], key=lambda r: r.point.relays_per_group)
            xs = [r.point.relays_per_group for r in points]
            ys = [getattr(r, metric) for r in points]
            errs = [getattr(r, std_metric) for r in points]
            mask = [i for i, y in enumerate(ys) if math.isfinite(y)]
            if not mask:
                continue
            ax.errorbar([xs[i] for i in mask], [ys[i] for i in mask],
                        yerr=[errs[i] for i in mask], marker="o", capsize=3,
                        label=_series_label(points[0].point, varying))
        if logy:
            ax.set_yscale("log")
        else:
            ax.axhline(digital_accuracy, color="black", linestyle="--",
                       linewidth=1, label="digital baseline")
            ax.set_ylim(0.0, 1.05)
        ax.set_xlabel("relays per group K")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def cmd_optimize(config: ExperimentConfig) -> int:
    out_dir = config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []

    task, baseline = _target_and_task(config)
    topo_cfg = config.data["topology"]
    ch_cfg = config.data["channel"]
    point = GridPoint(
        n_groups=topo_cfg["n_groups"],
        relays_per_group=topo_cfg["relays_per_group"],
        p_relay_w=float(config.data["power"]["p_relay_w"]),
        d_max_m=float(ch_cfg["d_max_m"]),
        direct_link=ch_cfg["direct_link"])
    settings = config.sweep_settings()

    key = trial_seed_key(config.seed, point, 0)
    rng = np.random.default_rng(np.random.SeedSequence(list(key)))
    rng_topo, rng_chan, rng_eval = rng.spawn(3)
    topology = generate_topology(point.d_max_m, point.n_groups,
                                 point.relays_per_group, settings.heights_m,
                                 rng_topo)
    channels = generate_channel_set(
        topology, config.links(), settings.n_tx, settings.n_rx,
        settings.f_c_hz, point.direct_link, rng_chan, settings.pathloss_table,
        realization_seed=config.seed)
    noise = config.noise_model(point.n_groups)
    budget = config.budget(channels.group_sizes)

    chset_path = os.path.join(out_dir, "channels.chset.json")
    save_channel_set(channels, chset_path)
    written.append(chset_path)
    wmat_path = os.path.join(out_dir, "target.wmat.json")
    save_weights(baseline.w, baseline.b, wmat_path,
                 baseline.reported_accuracy)
    written.append(wmat_path)

    trace = None
    try:
        params, trace = run_ao(channels, baseline.w, noise, budget,
                               config.ao_config())
    except SolverDiverged as exc:
        if exc.trace is not None:
            trace_path = os.path.join(out_dir, "trace.csv")
            write_csv(trace_path, TRACE_HEADER, _trace_rows(exc.trace))
            written.append(trace_path)
        manifest = build_manifest("optimize", config, written, out_dir)
        _write_json(os.path.join(out_dir, "manifest.json"), manifest.to_dict())
        print(f"solver diverged: {exc}", file=sys.stderr)
        return 1

    trace_path = os.path.join(out_dir, "trace.csv")
    write_csv(trace_path, TRACE_HEADER, _trace_rows(trace))
    written.append(trace_path)

    solution_path = os.path.join(out_dir, "solution.json")
    _write_json(solution_path, {
        "format": "airfc-solution-v1",
        "f1": matrix_to_json(params.f1),
        "f2": matrix_to_json(params.f2),
        "gains": [matrix_to_json(np.asarray(a).reshape(-1, 1))
                  for a in params.gains],
    })
    written.append(solution_path)

    realized = params.f2 @ effective_channel(channels, params.gains) @ params.f1
    nmse = imitation_nmse(realized, baseline.w)
    ratio = max_power_ratio(params, channels, noise, budget)
    ota_accuracy = evaluate_ota_accuracy(
        params, channels, noise, baseline, task,
        config.data["task"]["n_noise_draws"], rng_eval)
    final = trace.objectives[-1]
    objective_path = os.path.join(out_dir, "objective.json")
    _write_json(objective_path, {
        "imitation_error": _json_num(final.imitation_error),
        "noise_penalty": _json_num(final.noise_penalty),
        "total": _json_num(final.total),
        "nmse": _json_num(nmse),
        "iterations": trace.iterations,
        "termination": trace.termination,
        "max_power_ratio": _json_num(ratio),
        "feasible": bool(ratio <= 1.0 + 1e-9),
        "digital_accuracy": _json_num(baseline.reported_accuracy),
        "ota_accuracy": _json_num(ota_accuracy),
        "notes": trace.notes[:50],
    })
    written.append(objective_path)

    if config.make_plots:
        plot_path = os.path.join(out_dir, "convergence.svg")
        _plot_convergence(trace, plot_path)
        written.append(plot_path)

    manifest = build_manifest("optimize", config, written, out_dir)
    _write_json(os.path.join(out_dir, "manifest.json"), manifest.to_dict())

    print(f"optimize: {point.label()}")
    print(f"  iterations={trace.iterations} termination={trace.termination}")
    print(f"  objective={final.total:.6e} nmse={nmse:.6e}")
    print(f"  digital accuracy={baseline.reported_accuracy:.4f} "
          f"ota accuracy={ota_accuracy:.4f}")
    print(f"  outputs in {out_dir}")
    return 0


def _results_rows(results: list[SweepResult]) -> list[list]:
    rows = []
    for index, res in enumerate(results):
        p = res.point
        for rec in res.records:
            rows.append([
                index, p.n_groups, p.relays_per_group, p.p_relay_w, p.d_max_m,
                p.direct_link, rec.trial,
                "-".join(str(v) for v in rec.seed_key), rec.nmse,
                rec.accuracy, rec.imitation_error, rec.noise_penalty,
                rec.objective_total, rec.iterations, rec.max_power_ratio,
                rec.termination, rec.error,
            ])
    return rows


def _summary_doc(config: ExperimentConfig, results: list[SweepResult],
                 digital_accuracy: float) -> dict:
    points = []
    for index, res in enumerate(results):
        p = res.point
        points.append({
            "point": index,
            "n_groups": p.n_groups,
            "relays_per_group": p.relays_per_group,
            "p_relay_w": p.p_relay_w,
            "d_max_m": p.d_max_m,
            "direct_link": p.direct_link,
            "n_trials": res.n_trials,
            "n_failed": res.n_failed,
            "partial": res.partial,
            "mean_accuracy": _json_num(res.mean_accuracy),
            "std_accuracy": _json_num(res.std_accuracy),
            "mean_nmse": _json_num(res.mean_nmse),
            "std_nmse": _json_num(res.std_nmse),
        })
    return {
        "config_hash": config.semantic_hash(),
        "base_seed": config.seed,
        "trials": config.data["sweep"]["trials"],
        "digital_accuracy": _json_num(digital_accuracy),
        "points": points,
    }


def cmd_sweep(config: ExperimentConfig) -> int:
    out_dir = config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []

    task, baseline = _target_and_task(config)
    points = config.sweep_points()
    trials = config.data["sweep"]["trials"]
    settings = config.sweep_settings()

    total_jobs = len(points) * trials

    def progress(done: int, total: int) -> None:
        if done % trials == 0 or done == total:
            print(f"  {done}/{total} trials done", flush=True)

    print(f"sweep: {len(points)} grid points x {trials} trials "
          f"(workers={config.workers})")
    results = monte_carlo_sweep(points, trials, config.seed, task, baseline,
                                settings, workers=config.workers,
                                progress=progress)

    csv_path = os.path.join(out_dir, "results.csv")
    write_csv(csv_path, RESULTS_HEADER, _results_rows(results))
    written.append(csv_path)

    summary_path = os.path.join(out_dir, "summary.json")
    _write_json(summary_path,
                _summary_doc(config, results, baseline.reported_accuracy))
    written.append(summary_path)

    wmat_path = os.path.join(out_dir, "target.wmat.json")
    save_weights(baseline.w, baseline.b, wmat_path,
                 baseline.reported_accuracy)
    written.append(wmat_path)

    if config.make_plots:
        acc_path = os.path.join(out_dir, "accuracy_vs_k.svg")
        nmse_path = os.path.join(out_dir, "nmse_vs_k.svg")
        _plot_sweep(results, baseline.reported_accuracy, acc_path, nmse_path)
        written.extend([acc_path, nmse_path])

    manifest = build_manifest("sweep", config, written, out_dir)
    _write_json(os.path.join(out_dir, "manifest.json"), manifest.to_dict())

    for index, res in enumerate(results):
        status = "partial" if res.partial else "ok"
        mean_acc = res.mean_accuracy
        acc_txt = f"{mean_acc:.4f}" if math.isfinite(mean_acc) else "n/a"
        print(f"  [{index}] {res.point.label()}: accuracy={acc_txt} "
              f"({status})")
    print(f"  digital baseline accuracy={baseline.reported_accuracy:.4f}")
    print(f"  outputs in {out_dir}")

    if all(res.n_failed == res.n_trials for res in results):
        print("all grid points failed", file=sys.stderr)
        return 1
    return 0


def cmd_validate(config_path: str) -> int:
    ExperimentConfig.from_file(config_path)
    print("ok")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)

    if args.command == "validate":
        try:
            return cmd_validate(args.config)
        except ConfigError as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return 2

    overrides = {}
    if args.out:
        overrides["output_dir"] = args.out
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.no_plots:
        overrides["make_plots"] = False
    try:
        config = ExperimentConfig.from_file(args.config, overrides)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "optimize":
            return cmd_optimize(config)
        return cmd_sweep(config)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except AirFcError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
