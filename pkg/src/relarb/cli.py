"""Scenario-driven command line: validate, simulate, fichera, arbitrage, nash, mfg, converge.

Every run writes the resolved configuration, a machine-readable summary and a
manifest into the output directory.  Summaries are byte-deterministic given
(config, seed); --threads is accepted for interface compatibility and can
only affect wall-clock, never results.  Exit codes: 0 success, 2 infeasible
scenario, 1 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .arbitrage import estimate_u_mc, fichera_check, solve_cauchy_fd
from .convergence import iid_decay_slope, sweep_n
from .engine import benchmark_path, simulate_deflator, simulate_n_particle
from .errors import ConfigError, InfeasibleScenarioError, RelarbError
from .io import canonical_json, sha256_of, write_csv, write_json
from .mfg import solve_mfe
from .model import scenario_from_dict, validate_scenario
from .nash import solve_nash

SUBCOMMANDS = ("validate", "simulate", "fichera", "arbitrage", "nash", "mfg", "converge")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relarb",
                                description="Relative-arbitrage portfolio game solvers")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", type=Path, help="scenario JSON file")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed (u64)")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads (wall-clock only, never results)")
        sp.add_argument("--out", type=Path, default=Path("relarb-out"), help="output directory")
        sp.add_argument("--paths", type=int, default=None, help="override Monte Carlo path count")
        sp.add_argument("--ccond-literal", action="store_true",
                        help="evaluate the preference condition without the 1/N factor")
        sp.add_argument("--cdf-std-normalized", action="store_true",
                        help="use the standard-deviation-normalized uniqueness CDF")
        sp.add_argument("--strict-simplex", action="store_true",
                        help="raise when strategies leave the simplex beyond tolerance")
        sp.add_argument("--csv", action="store_true", help="also dump CSV tables")
        if name == "converge":
            sp.add_argument("--n-values", type=str, default="8,32,128",
                            help="comma-separated investor counts")
    return p


def _load(args) -> tuple:
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {args.config}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    config, oracle = scenario_from_dict(doc)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = int(args.seed)
    solver = config.solver
    solver_over = {}
    if args.paths is not None:
        solver_over["n_paths"] = int(args.paths)
    if args.ccond_literal:
        solver_over["ccond_literal"] = True
    if args.cdf_std_normalized:
        solver_over["cdf_std_normalized"] = True
    if args.strict_simplex:
        solver_over["strict_simplex"] = True
    if solver_over:
        overrides["solver"] = replace(solver, **solver_over)
    if overrides:
        config = replace(config, **overrides)
    return config, oracle, doc.get("market", {})


def _run_subcommand(args, config, oracle, outdir: Path) -> dict:
    name = args.subcommand
    if name == "validate":
        return {"validation": validate_scenario(config, oracle).to_dict()}

    if name == "simulate":
        paths = simulate_n_particle(oracle, config, seed=config.seed,
                                    n_paths=min(config.solver.n_paths, 4096))
        defl = simulate_deflator(paths, oracle, config)
        bench = benchmark_path(paths, config)
        if args.csv:
            t = paths.grid
            write_csv(outdir / "paths_stocks.csv", t,
                      {f"X{i}": paths.X[0, :, i] for i in range(config.n_stocks)})
            write_csv(outdir / "paths_wealth.csv", t,
                      {f"V{l}": paths.V[0, :, l] for l in range(config.n_investors)})
            write_csv(outdir / "paths_invested.csv", t,
                      {f"Y{i}": paths.Y[0, :, i] for i in range(config.n_stocks)})
            write_csv(outdir / "deflator.csv", t, {"L": defl.L[0], "Theta": defl.Theta[0]})
            write_csv(outdir / "benchmark.csv", t,
                      {"Vbench": bench.Vbench[0], "market_total": bench.market_total[0],
                       "peer_average": bench.peer_average[0]})
        g = bench.Vbench[:, -1] * defl.L[:, -1] / bench.Vbench[:, 0]
        return {
            "n_paths": paths.n_paths,
            "terminal": {
                "x_total_mean": float(bench.market_total[:, -1].mean()),
                "vbench_mean": float(bench.Vbench[:, -1].mean()),
                "deflator_mean": float(defl.L[:, -1].mean()),
                "deflated_benchmark_mean": float(g.mean()),
                "deflated_benchmark_se": float(g.std(ddof=1) / np.sqrt(len(g))),
            },
            "min_state": {"X": float(paths.X.min()), "V": float(paths.V.min())},
            "y_clamp_count": paths.y_clamp_count,
        }

    if name == "fichera":
        report = fichera_check(oracle, config)
        write_json(outdir / "fichera.json", report.to_dict())
        return {"fichera": report.to_dict()}

    if name == "arbitrage":
        est = estimate_u_mc(oracle, config, investor=0, n_paths=config.solver.n_paths)
        out = {
            "u_hat": est.u_hat, "std_err": est.std_err, "n_paths": est.n_paths,
            "c": est.c, "normalized": est.normalized, "low_paths": est.low_paths,
            "u_normalized": est.u_normalized,
        }
        if config.n_stocks == 1:
            grid = solve_cauchy_fd(oracle, config)
            out["fd_value"] = grid.value_at(config.x0[0], max(config.y0[0], 1e-6))
            out["fd_cfl_ratio"] = grid.cfl_ratio
            out["fd_boundary_warning"] = grid.boundary_warning
            if args.csv:
                for label, idx in (("first", 0), ("mid", grid.values.shape[0] // 2), ("last", -1)):
                    sl = grid.values[idx]
                    write_csv(outdir / f"grid_slice_{label}.csv", np.exp(grid.xi),
                              {f"y{j}": sl[:, j] for j in range(0, sl.shape[1], max(sl.shape[1] // 8, 1))})
        return out

    if name == "nash":
        result = solve_nash(oracle, config)
        if args.csv:
            t = config.grid
            write_csv(outdir / "nash_m_path.csv", t, {"m": result.m_path})
            cols = {}
            for l in range(config.n_investors):
                for i in range(config.n_stocks):
                    cols[f"pi_{l}_{i}"] = result.strategies[:, l, i]
            write_csv(outdir / "nash_strategies.csv", t, cols)
        return {"nash": result.to_dict()}

    if name == "mfg":
        result = solve_mfe(oracle, config)
        if args.csv:
            t = config.grid
            write_csv(outdir / "mfg_m_path.csv", t, {"m_mean": result.m_path.mean(axis=0)})
            write_csv(outdir / "mfg_strategy.csv", t,
                      {f"pi_{i}": result.strategy_path[:, i] for i in range(config.n_stocks)})
        return {"mfg": result.to_dict()}

    if name == "converge":
        n_values = tuple(int(v) for v in args.n_values.split(","))
        report = sweep_n(oracle, config, n_values, seeds=(config.seed,),
                         mfe_kwargs={"max_iters": 5})
        slope, slope_se = iid_decay_slope(n_values)
        out = {"sweep": report.to_dict(), "iid_slope": slope, "iid_slope_se": slope_se}
        if args.csv:
            write_csv(outdir / "convergence_gaps.csv", np.asarray(n_values, dtype=float),
                      {"u_N": report.u_N, "gap": report.gaps, "gap_se": report.gap_se})
        return out

    raise ConfigError(f"unknown subcommand {name!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": args.subcommand,
        "config_path": str(args.config),
        "tool_version": __version__,
        "threads": args.threads,
        "outputs": [],
        "stages": {},
        "exit_code": None,
        "wall_clock_s": None,
    }
    t0 = time.monotonic()
    code = 1
    try:
        config, oracle, market_doc = _load(args)
        manifest["seed"] = config.seed
        resolved = config.to_dict()
        resolved["market"] = market_doc
        resolved_text = canonical_json(resolved) + "\n"
        (outdir / "resolved_config.json").write_text(resolved_text, encoding="utf-8")
        manifest["config_sha256"] = sha256_of(resolved_text)
        manifest["outputs"].append(str(outdir / "resolved_config.json"))
        manifest["stages"]["load"] = "ok"

        report = validate_scenario(config, oracle)
        manifest["stages"]["validate"] = "ok" if report.feasible else "infeasible"
        if not report.feasible:
            failed = [c for c in report.checks if c.hard and not c.passed]
            summary = {"subcommand": args.subcommand, "feasible": False,
                       "validation": report.to_dict()}
            write_json(outdir / "summary.json", summary)
            manifest["outputs"].append(str(outdir / "summary.json"))
            for c in failed:
                print(f"infeasible scenario: {c.message}", file=sys.stderr)
            code = 2
            return code

        body = _run_subcommand(args, config, oracle, outdir)
        summary = {"subcommand": args.subcommand, "feasible": True,
                   "seed": config.seed, **body}
        write_json(outdir / "summary.json", summary)
        manifest["outputs"].append(str(outdir / "summary.json"))
        manifest["stages"]["run"] = "ok"
        print(canonical_json(summary))
        code = 0
        return code
    except InfeasibleScenarioError as exc:
        manifest["stages"]["run"] = f"infeasible: {exc}"
        print(f"infeasible scenario: {exc}", file=sys.stderr)
        code = 2
        return code
    except (RelarbError, OSError, ValueError) as exc:
        manifest["stages"]["run"] = f"error: {exc}"
        print(f"error: {exc}", file=sys.stderr)
        code = 1
        return code
    finally:
        manifest["exit_code"] = code
        manifest["wall_clock_s"] = time.monotonic() - t0
        try:
            write_json(outdir / "manifest.json", manifest)
        except OSError:
            pass


if __name__ == "__main__":
    sys.exit(main())
