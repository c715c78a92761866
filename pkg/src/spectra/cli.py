"""Configuration-driven experiment harness.

Subcommands:
  spectra run <config.json>      -- one trace CSV per (grid combo, seed) plus summary.json
  spectra verify-lemma           -- closed-form descent bounds vs the brute-force oracle
  spectra rip-check <config>     -- Monte Carlo isometry ratios at ranks {r, 3r, 5r}
  spectra analyze <trace.csv>    -- JSON diagnostic report for a single trace

Configs are JSON: a problem block (see problems.build_problem), an optimizer
block (algorithm, T, schedule, optional s/mu_momentum/lambda/eps_schedule),
seeds, output_dir, and optional name/reference/init/fstar/floor.  Schedule
eta0/gamma may be arrays, which expands into a grid of combos named
{name}_g{i}.  lambda may be the string "auto" to use 1/||X*||_* per seed.
fstar may be a number or "reference_run" (minimum loss over a 3x-horizon run,
recorded with provenance).  SPECTRA_WORKERS > 1 runs seeds in parallel
processes; the default is serial and byte-reproducible.
"""
from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import analyze_trace, estimate_kappa  # noqa: F401  (re-exported for callers)
from .optimizers import DivergedError, EpsSchedule, OptimizerSpec, Schedule, Trace, run
from .problems import build_problem, make_init, gaussian_operator, rip_estimate
from .spectral_core import load_matrix_txt
from .theory import sd_lower_bound, tsd_lower_bound, brute_force_descent_min

__all__ = ["RunConfig", "ConfigError", "parse_config", "execute_config", "main"]

FSTAR_REFERENCE_FACTOR = 3


class ConfigError(ValueError):
    """Malformed run configuration; the message names the offending key."""


_TOP_KEYS = {"name", "problem", "optimizer", "seeds", "output_dir", "reference", "init", "fstar", "floor"}
_OPT_KEYS = {"algorithm", "T", "schedule", "s", "mu_momentum", "lambda", "eps_schedule"}


@dataclass(frozen=True)
class RunConfig:
    name: str
    problem: dict
    optimizer: dict
    seeds: tuple
    output_dir: str
    reference: str
    init: dict | None
    fstar: float | str | None
    floor: float

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "problem": dict(self.problem),
            "optimizer": json.loads(json.dumps(self.optimizer)),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "reference": self.reference,
            "floor": self.floor,
        }
        if self.init is not None:
            out["init"] = dict(self.init)
        if self.fstar is not None:
            out["fstar"] = self.fstar
        return out


def parse_config(source) -> RunConfig:
    """Parse a config from a dict, JSON string, or file path."""
    if isinstance(source, dict):
        raw = source
        default_name = "run"
    else:
        path = Path(source)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {source}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        default_name = path.stem
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    extra = set(raw) - _TOP_KEYS
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}")
    for key in ("problem", "optimizer", "seeds", "output_dir"):
        if key not in raw:
            raise ConfigError(f"missing required key '{key}'")
    seeds = raw["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("'seeds' must be a nonempty list of integers")
    opt = raw["optimizer"]
    if not isinstance(opt, dict):
        raise ConfigError("'optimizer' must be an object")
    extra_opt = set(opt) - _OPT_KEYS
    if extra_opt:
        raise ConfigError(f"unknown optimizer keys {sorted(extra_opt)}")
    for key in ("algorithm", "T", "schedule"):
        if key not in opt:
            raise ConfigError(f"optimizer block is missing '{key}'")
    reference = raw.get("reference", "none")
    fstar = raw.get("fstar")
    if fstar is not None and not isinstance(fstar, (int, float)) and fstar != "reference_run":
        raise ConfigError("'fstar' must be a number or \"reference_run\"")
    floor = raw.get("floor", 0.0)
    if not isinstance(floor, (int, float)) or floor < 0:
        raise ConfigError("'floor' must be a nonnegative number")
    return RunConfig(
        name=raw.get("name", default_name),
        problem=dict(raw["problem"]),
        optimizer=opt,
        seeds=tuple(seeds),
        output_dir=raw["output_dir"],
        reference=reference,
        init=raw.get("init"),
        fstar=fstar,
        floor=float(floor),
    )


def grid_combos(optimizer: dict) -> list[dict]:
    """Expand array-valued schedule eta0/gamma into a list of scalar combos."""
    sched = optimizer.get("schedule", {})
    axes = []
    for key in ("eta0", "gamma"):
        val = sched.get(key)
        if isinstance(val, list):
            if not val:
                raise ConfigError(f"schedule grid '{key}' must be nonempty")
            axes.append([(key, v) for v in val])
    if not axes:
        return [{}]
    return [dict(choice) for choice in itertools.product(*axes)]


def _ground_truth(problem):
    for attr in ("x_true", "w_true"):
        ref = getattr(problem, attr, None)
        if ref is not None:
            return ref
    raise ConfigError("reference 'ground_truth' but the problem has no ground truth")


def _build_for_seed(cfg: RunConfig, combo: dict, seed: int, horizon_factor: int = 1):
    """Materialize (problem, spec, reference, x0) for one run."""
    block = dict(cfg.problem)
    block["seed"] = seed
    try:
        problem = build_problem(block)
    except ValueError as exc:
        # malformed problem blocks surface as config errors (exit 2), not tracebacks
        raise ConfigError(str(exc)) from None

    opt = cfg.optimizer
    lam = opt.get("lambda")
    if lam == "auto":
        R = getattr(problem, "R", None)
        if R is None or R <= 0:
            raise ConfigError("lambda \"auto\" needs a problem with a nuclear-norm scale")
        lam = 1.0 / R
    sched_block = dict(opt["schedule"])
    sched_block.update(combo)
    if sched_block.get("kind") == "frank_wolfe" and "lambda" not in sched_block and "lam" not in sched_block:
        if lam is None:
            raise ConfigError("frank_wolfe schedule needs 'lambda' (directly or via the optimizer)")
        sched_block["lambda"] = lam
    eps_block = opt.get("eps_schedule")
    eps = None
    if eps_block is not None:
        eps_block = dict(eps_block)
        if "lambda" in eps_block:
            eps_block["lam"] = eps_block.pop("lambda")
        if eps_block.get("kind") in ("coupled_sqrt", "sensing_theory", "sensing_default"):
            eps_block.setdefault("lam", lam)
        if eps_block.get("kind") in ("sensing_theory", "sensing_default"):
            eps_block.setdefault("m", getattr(problem, "m"))
        if eps_block.get("kind") == "coupled_sqrt":
            eps_block.setdefault("dim", max(problem.shape))
        try:
            eps = EpsSchedule.from_config(eps_block)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    try:
        schedule = Schedule.from_config(sched_block)
        spec = OptimizerSpec(
            algorithm=opt["algorithm"],
            schedule=schedule,
            T=int(opt["T"]) * horizon_factor,
            s=opt.get("s"),
            mu_momentum=opt.get("mu_momentum", 0.0),
            lam=lam,
            eps_schedule=eps,
        )
    except ValueError as exc:  # ScheduleError included
        raise ConfigError(str(exc))

    if cfg.reference == "none":
        reference = None
    elif cfg.reference == "ground_truth":
        reference = _ground_truth(problem)
    else:
        try:
            reference = load_matrix_txt(cfg.reference)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"reference file {cfg.reference!r}: {exc}") from None

    x0 = None
    if cfg.init is not None:
        kind = cfg.init.get("kind", "zeros")
        if kind == "gaussian":
            x0 = make_init(*problem.shape, seed=seed, scale=cfg.init.get("scale", 1.0))
        elif kind != "zeros":
            raise ConfigError(f"unknown init kind {kind!r}")
    return problem, spec, reference, x0


def _run_task(payload: dict) -> dict:
    """One run, executed possibly in a worker process.  Returns summary-row
    material plus the f/dist columns for mean-curve aggregation."""
    cfg = parse_config(payload["config"])
    combo = payload["combo"]
    seed = payload["seed"]
    factor = payload.get("horizon_factor", 1)
    problem, spec, reference, x0 = _build_for_seed(cfg, combo, seed, factor)
    trace = run(problem, spec, reference=reference, seed=seed, x0=x0)
    out = {
        "combo": payload["combo_index"],
        "seed": seed,
        "rows": len(trace),
        "final_f": float(trace.f[-1]),
        "min_f": float(np.min(trace.f)),
        "f": trace.f.tolist(),
    }
    if reference is not None:
        ref_norm = float(np.linalg.norm(reference))
        out["final_dist"] = float(trace.dist[-1])
        out["final_rel_error"] = float(trace.dist[-1]) / ref_norm
        out["dist"] = trace.dist.tolist()
    else:
        out["final_dist"] = None
        out["final_rel_error"] = None
        out["dist"] = None
    if payload.get("csv_path"):
        trace.to_csv(payload["csv_path"])
    return out


def execute_config(cfg: RunConfig, echo=print) -> dict:
    """Run every (combo, seed) pair, write CSVs + summary.json, return the summary."""
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    combos = grid_combos(cfg.optimizer)
    multi = len(combos) > 1

    tasks = []
    for ci, combo in enumerate(combos):
        for seed in cfg.seeds:
            stem = f"{cfg.name}_g{ci}" if multi else cfg.name
            tasks.append(
                {
                    "config": cfg.to_dict(),
                    "combo": combo,
                    "combo_index": ci,
                    "seed": seed,
                    "csv_path": str(out_dir / f"{stem}_seed{seed}.csv"),
                }
            )
    if cfg.fstar == "reference_run":
        for seed in cfg.seeds:
            tasks.append(
                {
                    "config": cfg.to_dict(),
                    "combo": combos[0],
                    "combo_index": -1,
                    "seed": seed,
                    "csv_path": None,
                    "horizon_factor": FSTAR_REFERENCE_FACTOR,
                }
            )

    workers = int(os.environ.get("SPECTRA_WORKERS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]

    run_rows = [r for r in results if r["combo"] >= 0]
    ref_rows = {r["seed"]: r for r in results if r["combo"] < 0}

    # f* per seed: fixed number, or min over the long reference run and every
    # ordinary run of that seed
    fstar_values: dict[int, float | None] = {}
    if isinstance(cfg.fstar, (int, float)):
        mode = "fixed"
        for seed in cfg.seeds:
            fstar_values[seed] = float(cfg.fstar)
    elif cfg.fstar == "reference_run":
        mode = "reference_run"
        for seed in cfg.seeds:
            candidates = [r["min_f"] for r in run_rows if r["seed"] == seed]
            candidates.append(ref_rows[seed]["min_f"])
            fstar_values[seed] = min(candidates)
    else:
        mode = "none"
        for seed in cfg.seeds:
            fstar_values[seed] = None

    runs = []
    for row in sorted(run_rows, key=lambda r: (r["combo"], r["seed"])):
        stem = f"{cfg.name}_g{row['combo']}" if multi else cfg.name
        csv_name = f"{stem}_seed{row['seed']}.csv"
        trace = Trace.from_csv(out_dir / csv_name)
        metrics = analyze_trace(trace, f_star=fstar_values[row["seed"]], floor=cfg.floor)
        runs.append(
            {
                "combo": row["combo"],
                "seed": row["seed"],
                "csv": csv_name,
                "rows": row["rows"],
                "final_f": row["final_f"],
                "min_f": row["min_f"],
                "final_dist": row["final_dist"],
                "final_rel_error": row["final_rel_error"],
                "metrics": metrics,
            }
        )
        echo(f"wrote {csv_name}  rows={row['rows']}  final_f={row['final_f']:.6g}")

    # linear-space mean over seeds, per combo, truncated to the shortest seed
    mean_curves = []
    for ci in range(len(combos)):
        rows = [r for r in run_rows if r["combo"] == ci]
        n = min(r["rows"] for r in rows)
        f_mean = np.mean([r["f"][:n] for r in rows], axis=0)
        curve = {"combo": ci, "t": list(range(n)), "f": f_mean.tolist()}
        if all(r["dist"] is not None for r in rows):
            curve["dist"] = np.mean([r["dist"][:n] for r in rows], axis=0).tolist()
        else:
            curve["dist"] = None
        mean_curves.append(curve)

    best_per_seed = {}
    for seed in cfg.seeds:
        seed_rows = [r for r in run_rows if r["seed"] == seed]
        best_per_seed[str(seed)] = min(seed_rows, key=lambda r: r["final_f"])["combo"]
    combo_mean_f = {
        ci: float(np.mean([r["final_f"] for r in run_rows if r["combo"] == ci]))
        for ci in range(len(combos))
    }
    best_combo = min(combo_mean_f, key=combo_mean_f.get)

    summary = {
        "name": cfg.name,
        "config": cfg.to_dict(),
        "combos": [{"index": i, **combo} for i, combo in enumerate(combos)],
        "fstar": {
            "mode": mode,
            **({"factor": FSTAR_REFERENCE_FACTOR} if mode == "reference_run" else {}),
            "values": {str(seed): fstar_values[seed] for seed in cfg.seeds},
        },
        "floor": cfg.floor,
        "runs": runs,
        "best_per_seed": best_per_seed,
        "best_combo": best_combo,
        "mean_curves": mean_curves,
    }
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    echo(f"summary: {summary_path}")
    return summary


def cmd_run(args) -> int:
    try:
        cfg = parse_config(args.config)
        execute_config(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergedError as exc:
        print(f"run diverged at iteration {exc.iteration}", file=sys.stderr)
        return 1
    return 0


def cmd_verify_lemma(args) -> int:
    """Closed-form one-step descent bounds vs the brute-force oracle."""
    if args.n_max > 5:
        print("n-max is capped at 5 (oracle cost grows combinatorially)", file=sys.stderr)
        return 2
    worst = 0.0
    print(f"{'n':>2} {'s':>2} {'kappa':>6} {'closed_form':>22} {'oracle':>22} {'gap':>10}")
    for n in range(1, args.n_max + 1):
        for s in range(1, n + 1):
            for kappa in (0.6, 0.8, 0.95):
                closed = tsd_lower_bound(kappa, 1.0, s, n)
                oracle = brute_force_descent_min(kappa, 1.0, 1.0, n, s, args.grid)
                gap = abs(closed - oracle)
                worst = max(worst, gap)
                print(f"{n:>2} {s:>2} {kappa:>6.2f} {closed:>22.17g} {oracle:>22.17g} {gap:>10.3g}")
    print(f"worst gap: {worst:.3g}")
    if worst > 2e-3:
        print("FAIL: gap exceeds 2e-3", file=sys.stderr)
        return 2
    print("OK: all bounds match the oracle within 2e-3")
    return 0


def cmd_rip_check(args) -> int:
    """Monte Carlo ell1/ell2 isometry ratios at ranks {r, 3r, 5r}."""
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        block = raw.get("problem", raw)
        n1, n2, r, m = block["n1"], block["n2"], block["r"], block["m"]
        seed = block.get("seed", 0)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"config error: {exc!r}", file=sys.stderr)
        return 2
    op = gaussian_operator(n1, n2, m, seed, storage=block.get("storage", "dense"))
    base = math.sqrt(2.0 / math.pi)
    print(f"operator {n1}x{n2}, m={m}, seed={seed}; expected ratio sqrt(2/pi)={base:.6f}")
    print(f"{'rank':>5} {'ratio_min':>12} {'ratio_max':>12} {'delta_hat':>12}")
    delta_5r = None
    for mult in (1, 3, 5):
        rank = mult * r
        if rank > min(n1, n2):
            print(f"{rank:>5}  (skipped: exceeds min dimension)")
            continue
        est = rip_estimate(op, rank, trials=args.trials, seed=seed)
        print(f"{rank:>5} {est.ratio_min:>12.6f} {est.ratio_max:>12.6f} {est.delta_hat:>12.6f}")
        if mult == 5:
            delta_5r = est.delta_hat
    if delta_5r is not None:
        verdict = "holds" if delta_5r < 0.08 else "NOT satisfied"
        print(f"recovery precondition delta_(5r) < 0.08: {verdict} (delta_hat={delta_5r:.6f})")
    return 0


def cmd_analyze(args) -> int:
    try:
        trace = Trace.from_csv(args.trace)
    except (OSError, ValueError) as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return 2
    report = analyze_trace(trace, f_star=args.fstar, floor=args.floor)
    print(json.dumps(report, indent=2))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spectra", description="matrix-sign descent experiment harness"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a run config")
    p_run.add_argument("config", help="path to a JSON run config")
    p_run.set_defaults(func=cmd_run)

    p_lemma = sub.add_parser("verify-lemma", help="descent bounds vs brute-force oracle")
    p_lemma.add_argument("--n-max", type=int, default=4, dest="n_max")
    p_lemma.add_argument("--grid", type=int, default=60)
    p_lemma.set_defaults(func=cmd_verify_lemma)

    p_rip = sub.add_parser("rip-check", help="Monte Carlo isometry ratio estimates")
    p_rip.add_argument("config", help="sensing config (or problem block) JSON")
    p_rip.add_argument("--trials", type=int, default=200)
    p_rip.set_defaults(func=cmd_rip_check)

    p_an = sub.add_parser("analyze", help="diagnostic report for one trace CSV")
    p_an.add_argument("trace", help="path to a trace CSV")
    p_an.add_argument("--fstar", type=float, default=None)
    p_an.add_argument("--floor", type=float, default=0.0)
    p_an.set_defaults(func=cmd_analyze)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
