"""Command-line interface: simulate, reconstruct, evaluate, sweep.

Exit codes: 0 success, 2 input/dimension problems, 3 forward-solver
non-convergence, 4 optimizer divergence (partial outputs are still written).

All commands are deterministic for a fixed config and seed: random draws go
through seeded generators, reductions have fixed order, and report files
exclude wall-clock data (timings land in run_meta.json instead).
"""

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .arrayfile import read_array, write_array
from .errors import (
    BornTomoError,
    ConvergenceError,
    DimensionError,
    DivergenceError,
    InvalidInputError,
)
from .forward import MeasurementSet, simulate_measurements
from .greenops import build_operators
from .plotting import save_image_png, save_series_figure, save_trace_figure, write_pgm
from .regopt import (
    TVParams,
    default_tau,
    reconstruct_am,
    reconstruct_fb,
    reconstruct_rb,
    snr_db,
)
from .scene import Scene, shepp_logan

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_DIVERGED = 4


def load_scene(path):
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"scene file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: not valid JSON: {exc}") from exc
    return Scene.from_json_dict(doc)


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_trace_csv(path, report):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective", "data_fit", "step"])
        for i in range(report.iterations):
            writer.writerow([
                i + 1,
                f"{report.objective_trace[i]:.17g}",
                f"{report.data_fit_trace[i]:.17g}",
                f"{report.step_trace[i]:.17g}",
            ])


def _export_potential_images(outdir, stem, img, extent, label):
    scale = write_pgm(outdir / f"{stem}.pgm", img)
    save_image_png(outdir / f"{stem}.png", img, extent_cm=extent, cbar_label=label)
    return scale


def cmd_simulate(args):
    scene = load_scene(args.scene)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    f_true = shepp_logan(scene.grid, scene.medium, args.contrast).values
    fine = scene.refined(args.fine_factor)
    f_fine = shepp_logan(fine.grid, fine.medium, args.contrast).values
    ops_fine = build_operators(fine)
    data, residuals = simulate_measurements(ops_fine, f_fine, tol=args.ls_tol,
                                            max_iter=args.ls_max_iter)

    values = data.values
    noise_doc = None
    if args.noise_snr_db is not None:
        rng = np.random.default_rng(args.seed)
        signal_power = np.mean(np.abs(values) ** 2)
        sigma = np.sqrt(signal_power / 10.0 ** (args.noise_snr_db / 10.0))
        noise = (rng.standard_normal(values.shape) + 1j * rng.standard_normal(values.shape))
        values = values + noise * (sigma / np.sqrt(2.0))
        noise_doc = {"snr_db": args.noise_snr_db, "seed": args.seed}

    write_array(outdir / "y.arr", values)
    write_array(outdir / "f_true.arr", f_true.reshape(scene.grid.shape))
    scale = _export_potential_images(outdir, "f_true", f_true.reshape(scene.grid.shape),
                                     (scene.grid.extent_x, scene.grid.extent_y),
                                     "potential (1/cm^2)")
    _write_json(outdir / "manifest.json", {
        "scene": scene.to_json_dict(),
        "scene_hash": scene.scene_hash(),
        "contrast": args.contrast,
        "fine_factor": args.fine_factor,
        "solver": {"tol": args.ls_tol, "residuals": [float(r) for r in residuals]},
        "noise": noise_doc,
        "image_scale": scale,
        "files": {"measurements": "y.arr", "truth": "f_true.arr"},
    })
    print(f"simulate: wrote {values.shape[0]}x{values.shape[1]} measurements to {outdir}")
    return EXIT_OK


def _reconstruction_params(args, y):
    tau = default_tau(y) if args.tau == "auto" else float(args.tau)
    if tau < 0 or not np.isfinite(tau):
        raise InvalidInputError(f"tau must be finite and >= 0, got {tau}")
    return TVParams(tau=tau)


def _run_method(args, ops, data, f_true):
    params = _reconstruction_params(args, data.values)
    if args.method == "rb":
        return reconstruct_rb(ops, data, K=args.layers, params=params,
                              max_iter=args.max_iter, stop_tol=args.stop_tol, f_true=f_true)
    if args.method == "fb":
        return reconstruct_fb(ops, data, params=params,
                              max_iter=args.max_iter, stop_tol=args.stop_tol, f_true=f_true)
    return reconstruct_am(ops, data, params=params,
                          outer_iters=args.am_outer, inner_iters=args.am_inner,
                          stop_tol=args.stop_tol, f_true=f_true)


def _write_reconstruction_outputs(outdir, scene, report, data, input_manifest):
    outdir.mkdir(parents=True, exist_ok=True)
    img = report.potential.reshape(scene.grid.shape)
    write_array(outdir / "f_hat.arr", img)
    scale = _export_potential_images(outdir, "f_hat", img,
                                     (scene.grid.extent_x, scene.grid.extent_y),
                                     "potential (1/cm^2)")
    _write_json(outdir / "report.json", report.to_json_dict(include_timing=False))
    _write_json(outdir / "run_meta.json", {"wall_time_s": report.wall_time})
    _write_trace_csv(outdir / "trace.csv", report)
    traces = {report.method: report.data_fit_trace}
    save_trace_figure(outdir / "datafit.png", traces)
    _write_json(outdir / "manifest.json", {
        "scene_hash": scene.scene_hash(),
        "method": report.method,
        "K": report.K,
        "tau": report.tau,
        "image_scale": scale,
        "input_manifest": input_manifest,
        "files": {"estimate": "f_hat.arr", "report": "report.json", "trace": "trace.csv"},
    })


def cmd_reconstruct(args):
    scene = load_scene(args.scene)
    datadir = Path(args.data)
    y_path = datadir / "y.arr"
    if not y_path.is_file():
        raise InvalidInputError(f"no measurement file at {y_path}")
    y = read_array(y_path)
    expected = (scene.sensors.count, scene.sources.count)
    if y.shape != expected:
        raise DimensionError(f"measurements are {y.shape}, scene implies {expected}")
    data = MeasurementSet(y)

    f_true = None
    truth_path = datadir / "f_true.arr"
    if truth_path.is_file():
        truth_img = read_array(truth_path)
        if truth_img.shape == scene.grid.shape:
            f_true = np.real(truth_img).ravel()

    ops = build_operators(scene)
    outdir = Path(args.out)
    input_manifest = None
    manifest_path = datadir / "manifest.json"
    if manifest_path.is_file():
        input_manifest = json.loads(manifest_path.read_text())
    try:
        report = _run_method(args, ops, data, f_true)
    except DivergenceError as exc:
        if exc.last_iterate is not None:
            partial = exc.last_iterate.reshape(scene.grid.shape)
            outdir.mkdir(parents=True, exist_ok=True)
            write_array(outdir / "f_hat_partial.arr", partial)
            _write_json(outdir / "error.json",
                        {"error": str(exc), "iterations": exc.iterations})
        raise
    _write_reconstruction_outputs(outdir, scene, report, data, input_manifest)
    snr_text = "n/a" if report.snr_db is None else f"{report.snr_db:.2f} dB"
    fit = report.data_fit_trace[-1] if report.iterations else float("nan")
    print(f"reconstruct[{report.method}]: {report.iterations} iterations, "
          f"data fit {fit:.3e}, SNR {snr_text} -> {outdir}")
    return EXIT_OK


def cmd_evaluate(args):
    est = read_array(args.estimate)
    truth = read_array(args.truth)
    if est.shape != truth.shape:
        raise DimensionError(f"estimate {est.shape} vs truth {truth.shape}")
    value = snr_db(np.real(est).ravel(), np.real(truth).ravel())
    summary = {
        "snr_db": value,
        "estimate": str(args.estimate),
        "truth": str(args.truth),
        "shape": list(est.shape),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        _write_json(outdir / "evaluation.json", summary)
    return EXIT_OK


def _worker_count(requested):
    cap = os.environ.get("BORN_TOMO_THREADS")
    jobs = max(1, requested)
    if cap:
        jobs = min(jobs, max(1, int(cap)))
    return jobs


def _sweep_simulate_cell(payload):
    ns = argparse.Namespace(**payload["args"])
    try:
        code = cmd_simulate(ns)
        return {"key": payload["key"], "ok": code == EXIT_OK, "error": None}
    except BornTomoError as exc:
        return {"key": payload["key"], "ok": False, "error": str(exc)}


def _sweep_reconstruct_cell(payload):
    ns = argparse.Namespace(**payload["args"])
    started = time.perf_counter()
    try:
        code = cmd_reconstruct(ns)
        report = json.loads((Path(ns.out) / "report.json").read_text())
        return {
            "key": payload["key"],
            "ok": code == EXIT_OK,
            "error": None,
            "snr_db": report["snr_db"],
            "data_fit": report["data_fit_trace"][-1] if report["data_fit_trace"] else None,
            "iterations": report["iterations"],
            "wall_s": time.perf_counter() - started,
        }
    except BornTomoError as exc:
        return {"key": payload["key"], "ok": False, "error": str(exc)}


def _run_pool(worker, payloads, jobs):
    if jobs <= 1 or len(payloads) <= 1:
        return [worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, payloads))


def cmd_sweep(args):
    contrasts = [float(c) / 100.0 for c in args.contrasts.split(",")]
    methods = [m.strip() for m in args.methods.split(",")]
    k_values = sorted({int(k) for k in str(args.layers).split(",")})
    for m in methods:
        if m not in ("fb", "am", "rb"):
            raise InvalidInputError(f"unknown method '{m}' in --methods")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    jobs = _worker_count(args.jobs)

    sim_payloads = []
    for c in contrasts:
        simdir = outdir / f"c{round(c * 100):02d}" / "sim"
        sim_payloads.append({
            "key": f"sim-c{round(c * 100):02d}",
            "args": dict(scene=args.scene, contrast=c, out=str(simdir),
                         fine_factor=args.fine_factor, ls_tol=args.ls_tol,
                         ls_max_iter=args.ls_max_iter,
                         noise_snr_db=args.noise_snr_db, seed=args.seed),
        })
    sim_results = _run_pool(_sweep_simulate_cell, sim_payloads, jobs)
    sim_ok = {r["key"]: r["ok"] for r in sim_results}

    cell_payloads = []
    for c in contrasts:
        tag = f"c{round(c * 100):02d}"
        if not sim_ok.get(f"sim-{tag}", False):
            continue
        simdir = outdir / tag / "sim"
        for m in methods:
            cell_ks = k_values if m == "rb" else [1 if m == "fb" else 0]
            for k in cell_ks:
                name = f"{m}_K{k}" if m == "rb" else m
                cell_payloads.append({
                    "key": (tag, m, k),
                    "args": dict(scene=args.scene, data=str(simdir),
                                 out=str(outdir / tag / name),
                                 method=m, layers=k if m == "rb" else 1,
                                 tau=args.tau, max_iter=args.max_iter,
                                 stop_tol=args.stop_tol,
                                 am_outer=args.am_outer, am_inner=args.am_inner),
                })
    cell_results = _run_pool(_sweep_reconstruct_cell, cell_payloads, jobs)
    by_key = {tuple(r["key"]): r for r in cell_results}

    _write_sweep_tables(outdir, contrasts, methods, k_values, by_key, sim_results)
    ok_count = sum(1 for r in cell_results if r["ok"])
    print(f"sweep: {ok_count}/{len(cell_results)} cells succeeded -> {outdir}")
    return EXIT_OK if ok_count >= 1 else EXIT_INPUT


def _method_label(method):
    return {"fb": "First Born", "am": "Alternating Minimization", "rb": "Recursive Born"}[method]


def _write_sweep_tables(outdir, contrasts, methods, k_values, by_key, sim_results):
    k_max = max(k_values)
    tags = [f"c{round(c * 100):02d}" for c in contrasts]

    def cell_snr(tag, method, k):
        res = by_key.get((tag, method, k))
        if res and res.get("ok") and res.get("snr_db") is not None:
            return float(res["snr_db"])
        return None

    # Table: one row per method, one column per contrast (RB at the deepest K)
    header = ["method"] + [f"{round(c * 100)}%" for c in contrasts]
    rows = []
    for m in methods:
        k = k_max if m == "rb" else (1 if m == "fb" else 0)
        rows.append([_method_label(m)] + [cell_snr(tag, m, k) for tag in tags])
    with open(outdir / "table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[0]] + ["" if v is None else f"{v:.2f}" for v in row[1:]])

    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join(["---"] * len(header)) + "|"]
    for j, row in enumerate(rows):
        cells = []
        for i, v in enumerate(row[1:]):
            if v is None:
                cells.append("failed")
                continue
            col = [r[i + 1] for r in rows if r[i + 1] is not None]
            text = f"{v:.2f}"
            cells.append(f"**{text}**" if v == max(col) else text)
        lines.append("| " + row[0] + " | " + " | ".join(cells) + " |")
    (outdir / "table.md").write_text(
        "# SNR (dB) by method and permittivity contrast\n\n" + "\n".join(lines) + "\n")

    # layer study: every (contrast, K) pair that ran the rb method
    with open(outdir / "snr_vs_k.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["contrast", "K", "snr_db"])
        for tag, c in zip(tags, contrasts):
            for k in k_values:
                v = cell_snr(tag, "rb", k)
                if v is not None:
                    writer.writerow([f"{round(c * 100)}%", k, f"{v:.4f}"])

    series = {}
    for tag, c in zip(tags, contrasts):
        vals = [cell_snr(tag, "rb", k) for k in k_values]
        if vals and all(v is not None for v in vals):
            series[f"{round(c * 100)}% contrast"] = vals
    if series:
        save_series_figure(outdir / "snr_vs_k.png", k_values, series,
                           xlabel="scattering layers K", ylabel="SNR (dB)", logx=True)

    method_series = {}
    for m in methods:
        k = k_max if m == "rb" else (1 if m == "fb" else 0)
        vals = [cell_snr(tag, m, k) for tag in tags]
        if all(v is not None for v in vals):
            method_series[_method_label(m)] = vals
    if method_series:
        save_series_figure(outdir / "snr_vs_contrast.png",
                           [round(c * 100) for c in contrasts], method_series,
                           xlabel="permittivity contrast (%)", ylabel="SNR (dB)")

    _write_json(outdir / "sweep_report.json", {
        "simulations": sim_results,
        "cells": [
            {**res, "key": list(key)} for key, res in sorted(by_key.items())
        ],
    })


def build_parser():
    parser = argparse.ArgumentParser(
        prog="borntomo",
        description="2D inverse scattering: multi-layer scattering reconstruction with TV",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate exact-solver measurements for a phantom")
    sim.add_argument("--scene", required=True, help="scene JSON path")
    sim.add_argument("--contrast", type=float, default=0.15, help="peak permittivity contrast")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--fine-factor", type=int, default=2, dest="fine_factor",
                     help="simulation grid refinement vs the scene grid")
    sim.add_argument("--ls-tol", type=float, default=1e-10, dest="ls_tol")
    sim.add_argument("--ls-max-iter", type=int, default=2000, dest="ls_max_iter")
    sim.add_argument("--noise-snr-db", type=float, default=None, dest="noise_snr_db")
    sim.add_argument("--seed", type=int, default=0)
    sim.set_defaults(func=cmd_simulate)

    rec = sub.add_parser("reconstruct", help="estimate the potential from measurements")
    rec.add_argument("--scene", required=True)
    rec.add_argument("--data", required=True, help="directory produced by simulate")
    rec.add_argument("--method", choices=("fb", "am", "rb"), default="rb")
    rec.add_argument("--layers", type=int, default=8, help="scattering layers K (rb)")
    rec.add_argument("--tau", default="auto", help="TV weight, or 'auto' for 1e-9 * 0.5||y||^2")
    rec.add_argument("--max-iter", type=int, default=500, dest="max_iter")
    rec.add_argument("--stop-tol", type=float, default=1e-6, dest="stop_tol")
    rec.add_argument("--am-outer", type=int, default=20, dest="am_outer")
    rec.add_argument("--am-inner", type=int, default=50, dest="am_inner")
    rec.add_argument("--out", required=True)
    rec.set_defaults(func=cmd_reconstruct)

    ev = sub.add_parser("evaluate", help="SNR of an estimate against ground truth")
    ev.add_argument("estimate", help="estimate ArrayFile")
    ev.add_argument("truth", help="ground-truth ArrayFile")
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_evaluate)

    sw = sub.add_parser("sweep", help="contrast x method x layers study")
    sw.add_argument("--scene", required=True)
    sw.add_argument("--contrasts", default="5,10,15,20", help="percent values, comma-separated")
    sw.add_argument("--methods", default="fb,am,rb")
    sw.add_argument("--layers", default="32", help="comma-separated K values for rb")
    sw.add_argument("--tau", default="auto")
    sw.add_argument("--max-iter", type=int, default=100, dest="max_iter")
    sw.add_argument("--stop-tol", type=float, default=1e-6, dest="stop_tol")
    sw.add_argument("--am-outer", type=int, default=20, dest="am_outer")
    sw.add_argument("--am-inner", type=int, default=50, dest="am_inner")
    sw.add_argument("--fine-factor", type=int, default=2, dest="fine_factor")
    sw.add_argument("--ls-tol", type=float, default=1e-10, dest="ls_tol")
    sw.add_argument("--ls-max-iter", type=int, default=2000, dest="ls_max_iter")
    sw.add_argument("--noise-snr-db", type=float, default=None, dest="noise_snr_db")
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", required=True)
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInputError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceError as exc:
        print(f"solver did not converge: {exc} (residual {exc.residual:.3e})", file=sys.stderr)
        return EXIT_SOLVER
    except DivergenceError as exc:
        print(f"optimizer diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
