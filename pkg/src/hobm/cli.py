"""Command-line entry point: ``hobm {generate,fit,decompose,plot,verify}``.

Exit codes: 0 clean, 1 every row failed, 2 config/usage error,
3 partial failure (or a fit that did not converge), 4 invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, decomposition, distribution, hbm, plots, rbm, synthdata, verify
from .config import ConfigError, RunConfig, load_config
from .errors import HobmError, NonConvergenceError
from .seeding import replicate_seed
from .textio import fmt_float

log = logging.getLogger("hobm")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_PARTIAL, EXIT_INVARIANT = 0, 1, 2, 3, 4


class _Refusal(Exception):
    pass


def _prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise _Refusal(f"output directory {out} exists and is not empty; pass --force to reuse it")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _out_dir(args, cfg: RunConfig | None, default: str) -> str:
    if args.out:
        return args.out
    if cfg is not None and cfg.output_dir:
        return cfg.output_dir
    return default


def _load(args) -> RunConfig:
    return load_config(args.config).with_overrides(mode=args.mode, seed=args.seed)


def true_distribution(cfg: RunConfig) -> distribution.DenseDistribution:
    return synthdata.generate_true_distribution(cfg.n, replicate_seed(cfg.base_seed, "truth", 0))


# -- generate ----------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _load(args)
    out = _prepare_out(_out_dir(args, cfg, "hobm-data"), args.force)
    truth_seed = replicate_seed(cfg.base_seed, "truth", 0)
    p_star = true_distribution(cfg)
    distribution.save_distribution(
        out / "truth.dist", p_star,
        {"role": "truth", "base_seed": cfg.base_seed, "seed": truth_seed, "config_hash": cfg.config_hash},
    )
    data_dir = out / "datasets"
    data_dir.mkdir(exist_ok=True)
    written = 1
    for N in cfg.sample_sizes:
        for r in range(cfg.replicates):
            seed = synthdata.dataset_seed(cfg.base_seed, N, r)
            d = synthdata.draw_dataset(p_star, N, seed)
            distribution.save_dataset(
                data_dir / f"N{N}_r{r:02d}.counts", d,
                {"role": "dataset", "base_seed": cfg.base_seed, "seed": seed, "sample_size": N,
                 "replicate": r, "config_hash": cfg.config_hash},
            )
            written += 1
    print(f"wrote {written} files to {out}")
    return EXIT_OK


# -- fit ---------------------------------------------------------------------


def _write_trace(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def _fit_hbm(args, cfg: RunConfig, data, out: Path) -> int:
    k = args.order or data.n
    gibbs = replace(cfg.gibbs, seed=replicate_seed(cfg.base_seed, "gibbs:fit", 0))
    ais = replace(cfg.ais, seed=replicate_seed(cfg.base_seed, "ais:fit", 0))
    target = distribution.eta_from_p(distribution.empirical_distribution(data))
    columns = ["iteration", "grad_norm", "log_z", "mean_log_likelihood"]
    try:
        result = hbm.fit_mle(target, hbm.HbmModel.uniform(data.n, k), cfg.fit, gibbs, ais)
    except NonConvergenceError as exc:
        d = exc.diagnostics
        rows = [
            (i, fmt_float(g), fmt_float(z), "nan")
            for i, (g, z) in enumerate(zip(d.get("grad_norms", []), d.get("log_z", [])))
        ]
        _write_trace(out / "trace.csv", columns, rows)
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps({"iterations": d.get("iterations"), "grad_norm": float(d.get("grad_norm", np.nan))}),
              file=sys.stderr)
        return EXIT_PARTIAL
    t = result.trace
    rows = [
        (int(i), fmt_float(g), fmt_float(z), fmt_float(ll))
        for i, g, z, ll in zip(t["iteration"], t["grad_norm"], t["log_z"], t["mean_log_likelihood"])
    ]
    _write_trace(out / "trace.csv", columns, rows)
    provenance = {
        "fit": {**cfg.fit.__dict__},
        "gibbs_seed": gibbs.seed,
        "ais_seed": ais.seed,
        "dataset": str(args.dataset),
        "converged": result.converged,
    }
    hbm.save_model(out / "model.hbm", result.model, provenance)
    summary = {
        "model": "hbm", "n": data.n, "k": k, "mode": cfg.fit.mode, "iterations": result.iterations,
        "grad_norm": result.grad_norm, "converged": result.converged,
        "log_z": -result.model.theta_bottom, "exact_log_z": hbm.exact_log_z(result.model),
    }
    print(json.dumps(summary))
    if not result.converged and cfg.fit.mode == "exact":
        print(f"warning: stopped at max_iterations with gradient norm {result.grad_norm:.3g}", file=sys.stderr)
    return EXIT_OK


def _fit_rbm(args, cfg: RunConfig, data, out: Path) -> int:
    m = args.hidden if args.hidden is not None else 0
    m0 = rbm.RbmModel.initialize(data.n, m, replicate_seed(cfg.base_seed, "rbm-init:fit", 0))
    cd = replace(cfg.cd, seed=replicate_seed(cfg.base_seed, "cd:fit", 0))
    result = rbm.train_cd(m0, data, cd)
    t = result.trace
    _write_trace(
        out / "trace.csv", ["epoch", "updates", t["metric_name"]],
        [(e, u, fmt_float(v)) for e, u, v in zip(t["epoch"], t["updates"], t["metric"])],
    )
    rbm.save_model(out / "model.rbm", result.model,
                   {"cd": {**cd.__dict__}, "init_seed": replicate_seed(cfg.base_seed, "rbm-init:fit", 0),
                    "dataset": str(args.dataset)})
    print(json.dumps({"model": "rbm", "n": data.n, "m": m, "updates": result.updates,
                      "final_" + t["metric_name"]: t["metric"][-1] if t["metric"] else None}))
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _load(args)
    data, _ = distribution.load_dataset(args.dataset)
    if data.n != cfg.n:
        raise ConfigError(f"dataset has n={data.n} but config has n={cfg.n}")
    out = _prepare_out(_out_dir(args, None, "hobm-fit"), args.force)
    if args.model == "hbm":
        return _fit_hbm(args, cfg, data, out)
    return _fit_rbm(args, cfg, data, out)


# -- decompose ---------------------------------------------------------------


def run_decomposition(cfg: RunConfig, workers: int = 1) -> list[decomposition.DecompositionReport]:
    p_star = true_distribution(cfg)
    reports = []
    for k in cfg.hbm_orders:
        log.info("hbm order %d", k)
        reports += decomposition.decompose_hbm(
            p_star, k, cfg.sample_sizes, cfg.replicates, cfg.base_seed,
            cfg.fit, cfg.gibbs, cfg.ais, cfg.projection_fit, workers,
        )
    for m in cfg.rbm_hidden:
        log.info("rbm hidden %d", m)
        reports += decomposition.decompose_rbm(
            p_star, m, cfg.sample_sizes, cfg.replicates, cfg.base_seed, cfg.cd, cfg.mle_sample_size, workers,
        )
    return reports


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return fmt_float(value)
    return str(value)


def write_results(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(decomposition.CSV_COLUMNS)
        for rep in reports:
            values = rep.csv_values()
            values[decomposition.CSV_COLUMNS.index("wall_time_s")] = f"{rep.wall_time_s:.3f}"
            w.writerow([_csv_cell(v) for v in values])


def cmd_decompose(args) -> int:
    cfg = _load(args)
    out = _prepare_out(_out_dir(args, cfg, "hobm-results"), args.force)
    start = time.perf_counter()
    reports = run_decomposition(cfg, args.workers)
    write_results(out / "results.csv", reports)
    meta = {
        "tool_version": __version__,
        "config_hash": cfg.config_hash,
        "config": cfg.raw,
        "base_seed": cfg.base_seed,
        "mode": cfg.mode,
        "rows": len(reports),
        "wall_time_s": round(time.perf_counter() - start, 3),
        "rows_detail": [
            {
                "family": r.family, "complexity": r.complexity, "sample_size": r.sample_size,
                "projection_gap": r.projection_gap, "proxy_noise_nats": r.proxy_noise_nats,
                "seeds": r.seeds, "failures": r.failures,
            }
            for r in reports
        ],
    }
    (out / "results_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written = plots.plot_results(out / "results.csv", out / "plots")
    print(f"wrote {out / 'results.csv'} ({len(reports)} rows) and {len(written)} plots")
    statuses = {r.status for r in reports}
    if statuses <= {"ok"}:
        return EXIT_OK
    if statuses == {"failed"}:
        return EXIT_FAILED
    return EXIT_PARTIAL


def cmd_plot(args) -> int:
    written = plots.plot_results(args.results, args.out or Path(args.results).parent / "plots")
    for path in written:
        print(path)
    return EXIT_OK


# -- verify ------------------------------------------------------------------


def cmd_verify(args) -> int:
    seed = args.seed
    if seed is None and args.config:
        seed = load_config(args.config).base_seed
    results = verify.run_checks(seed or 0)
    report = {
        "tool_version": __version__,
        "seed": seed or 0,
        "passed": all(r.passed for r in results),
        "checks": [r.as_dict() for r in results],
    }
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.json").write_text(text + "\n")
    for r in results:
        if not r.passed:
            print(f"FAIL {r.name}: measured {r.measured:.3g} > {r.threshold:.3g} ({r.detail})", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_INVARIANT


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hobm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hobm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON experiment config")
        p.add_argument("--out", help="output directory")
        p.add_argument("--force", action="store_true", help="write into a non-empty output directory")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        p.add_argument("--mode", choices=("exact", "sampled"))
        p.add_argument("--seed", type=int, help="override base_seed")

    p = sub.add_parser("generate", help="write P* and every replicate dataset")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit one model to one dataset")
    common(p)
    p.add_argument("--model", choices=("hbm", "rbm"), required=True)
    p.add_argument("--dataset", required=True, help="counts file written by 'generate'")
    p.add_argument("--order", type=int, help="HBM interaction order k (default n)")
    p.add_argument("--hidden", type=int, help="RBM hidden units (default 0)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("decompose", help="run the bias-variance sweep, write CSV and plots")
    common(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("plot", help="redraw plots from a results CSV")
    p.add_argument("results")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("verify", help="run the invariant self-checks")
    common(p, config_required=False)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, _Refusal) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HobmError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
