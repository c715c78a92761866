"""Config parsing, the run/verify-lemma/rip-check/analyze subcommands, and
reproducibility of the emitted artifacts."""
import json
from pathlib import Path

import numpy as np
import pytest

from spectra.cli import (
    ConfigError,
    RunConfig,
    execute_config,
    grid_combos,
    main,
    parse_config,
)
from spectra.optimizers import Trace


def tiny_sensing_config(tmp_path, **overrides):
    cfg = {
        "name": "tiny",
        "problem": {
            "kind": "lad_sensing",
            "n1": 8,
            "n2": 8,
            "r": 2,
            "m": 60,
            "p": 0.05,
            "sparse_std": 5.0,
            "dense_std": 0.0,
            "seed": 0,
        },
        "optimizer": {
            "algorithm": "rtsd_wd",
            "s": 1,
            "lambda": "auto",
            "T": 30,
            "schedule": {"kind": "frank_wolfe"},
            "eps_schedule": {"kind": "sensing_default"},
        },
        "seeds": [0, 1],
        "output_dir": str(tmp_path / "out"),
        "reference": "ground_truth",
        "init": {"kind": "gaussian", "scale": 1e-4},
        "fstar": 0.0,
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


# --- parsing -----------------------------------------------------------------------


def test_parse_config_round_trip(tmp_path):
    cfg = parse_config(tiny_sensing_config(tmp_path))
    again = parse_config(cfg.to_dict())
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda c: c.pop("problem"), "'problem'"),
        (lambda c: c.pop("seeds"), "'seeds'"),
        (lambda c: c.pop("output_dir"), "'output_dir'"),
        (lambda c: c.update(seeds=[]), "seeds"),
        (lambda c: c.update(seeds=["a"]), "seeds"),
        (lambda c: c.update(bogus_key=1), "bogus_key"),
        (lambda c: c["optimizer"].pop("schedule"), "'schedule'"),
        (lambda c: c["optimizer"].update(warmup=5), "warmup"),
        (lambda c: c.update(fstar="best_guess"), "fstar"),
        (lambda c: c.update(floor=-1.0), "floor"),
    ],
)
def test_parse_config_names_offending_key(tmp_path, mutate, fragment):
    cfg = tiny_sensing_config(tmp_path)
    mutate(cfg)
    with pytest.raises(ConfigError, match=fragment):
        parse_config(cfg)


def test_parse_config_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        parse_config("/nonexistent/cfg.json")


def test_grid_combos_expansion():
    opt = {"schedule": {"kind": "geometric", "eta0": [0.8, 0.9], "gamma": [0.93, 0.97, 0.99]}}
    combos = grid_combos(opt)
    assert len(combos) == 6
    assert {"eta0": 0.8, "gamma": 0.97} in combos
    assert grid_combos({"schedule": {"kind": "constant", "eta0": 0.1}}) == [{}]


# --- run ---------------------------------------------------------------------------


def test_run_writes_traces_and_summary(tmp_path, capsys):
    path = write_config(tmp_path, tiny_sensing_config(tmp_path))
    assert main(["run", path]) == 0
    out = tmp_path / "out"
    for seed in (0, 1):
        csv = out / f"tiny_seed{seed}.csv"
        assert csv.exists()
        tr = Trace.from_csv(csv)
        assert len(tr) == 31
        assert np.all(np.isfinite(tr.f))
    summary = json.loads((out / "summary.json").read_text())
    assert summary["name"] == "tiny"
    assert summary["fstar"] == {"mode": "fixed", "values": {"0": 0.0, "1": 0.0}}
    assert [r["seed"] for r in summary["runs"]] == [0, 1]
    for r in summary["runs"]:
        assert set(r["metrics"]) == {
            "gamma_hat", "slope", "r_squared", "mu_hat", "L_hat", "kappa_hat", "min_alignment",
        }
        assert r["final_rel_error"] is not None
    curve = summary["mean_curves"][0]
    assert len(curve["t"]) == len(curve["f"]) == 31
    assert curve["dist"] is not None


def test_run_is_byte_reproducible(tmp_path):
    cfg = tiny_sensing_config(tmp_path)
    path = write_config(tmp_path, cfg)
    assert main(["run", path]) == 0
    first = {p.name: p.read_bytes() for p in (tmp_path / "out").glob("*.csv")}
    assert main(["run", path]) == 0
    second = {p.name: p.read_bytes() for p in (tmp_path / "out").glob("*.csv")}
    assert first == second
    assert len(first) == 2


def test_run_grid_names_and_best_marking(tmp_path):
    cfg = tiny_sensing_config(tmp_path)
    cfg["name"] = "grid"
    cfg["optimizer"] = {
        "algorithm": "sd",
        "T": 20,
        "schedule": {"kind": "geometric", "eta0": [0.5, 1.0], "gamma": [0.9]},
    }
    cfg.pop("init")
    path = write_config(tmp_path, cfg)
    assert main(["run", path]) == 0
    out = tmp_path / "out"
    names = sorted(p.name for p in out.glob("*.csv"))
    assert names == [
        "grid_g0_seed0.csv",
        "grid_g0_seed1.csv",
        "grid_g1_seed0.csv",
        "grid_g1_seed1.csv",
    ]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["combos"] == [
        {"index": 0, "eta0": 0.5, "gamma": 0.9},
        {"index": 1, "eta0": 1.0, "gamma": 0.9},
    ]
    assert set(summary["best_per_seed"]) == {"0", "1"}
    assert summary["best_combo"] in (0, 1)
    # best_per_seed marks the combo with the lowest final loss for that seed
    for seed, combo in summary["best_per_seed"].items():
        finals = {r["combo"]: r["final_f"] for r in summary["runs"] if r["seed"] == int(seed)}
        assert finals[combo] == min(finals.values())


def test_run_reference_run_fstar(tmp_path):
    cfg = {
        "name": "cls",
        "problem": {"kind": "hinge", "N": 40, "n1": 3, "n2": 3, "flip_fraction": 0.1, "seed": 0},
        "optimizer": {
            "algorithm": "sd",
            "T": 25,
            "schedule": {"kind": "geometric", "eta0": 0.5, "gamma": 0.9},
        },
        "seeds": [0],
        "output_dir": str(tmp_path / "out"),
        "reference": "none",
        "init": {"kind": "gaussian", "scale": 1.0},
        "fstar": "reference_run",
    }
    path = write_config(tmp_path, cfg)
    assert main(["run", path]) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["fstar"]["mode"] == "reference_run"
    assert summary["fstar"]["factor"] == 3
    fstar = summary["fstar"]["values"]["0"]
    # the tripled-horizon reference run can only improve on the short run
    assert fstar <= min(r["min_f"] for r in summary["runs"])
    # no reference matrix: distance metrics are absent but the report exists
    assert summary["runs"][0]["final_rel_error"] is None
    assert summary["runs"][0]["metrics"]["min_alignment"] is None


def test_run_parallel_workers_match_serial(tmp_path, monkeypatch):
    cfg = tiny_sensing_config(tmp_path, output_dir=str(tmp_path / "serial"))
    execute_config(parse_config(cfg), echo=lambda *_: None)
    cfg2 = tiny_sensing_config(tmp_path, output_dir=str(tmp_path / "par"))
    monkeypatch.setenv("SPECTRA_WORKERS", "2")
    execute_config(parse_config(cfg2), echo=lambda *_: None)
    for seed in (0, 1):
        a = (tmp_path / "serial" / f"tiny_seed{seed}.csv").read_bytes()
        b = (tmp_path / "par" / f"tiny_seed{seed}.csv").read_bytes()
        assert a == b


def test_run_exit_codes(tmp_path, capsys):
    bad = tiny_sensing_config(tmp_path)
    bad.pop("problem")
    assert main(["run", write_config(tmp_path, bad, "bad.json")]) == 2
    assert "'problem'" in capsys.readouterr().err

    div = tiny_sensing_config(tmp_path)
    div["optimizer"] = {
        "algorithm": "sd",
        "T": 5,
        "schedule": {"kind": "constant", "eta0": 1e13},
    }
    div.pop("init")
    assert main(["run", write_config(tmp_path, div, "div.json")]) == 1
    assert "iteration" in capsys.readouterr().err

    # problem-block mistakes are config errors, not tracebacks
    unk = tiny_sensing_config(tmp_path)
    unk["problem"] = {"kind": "lp", "N": 10, "n1": 3, "n2": 3}
    assert main(["run", write_config(tmp_path, unk, "unk.json")]) == 2
    assert "unknown problem kind" in capsys.readouterr().err

    ref = tiny_sensing_config(tmp_path)
    ref["reference"] = str(tmp_path / "does_not_exist.txt")
    assert main(["run", write_config(tmp_path, ref, "ref.json")]) == 2
    assert "reference file" in capsys.readouterr().err


def test_run_auto_lambda_resolves_per_seed(tmp_path):
    cfg = tiny_sensing_config(tmp_path)
    path = write_config(tmp_path, cfg)
    assert main(["run", path]) == 0
    out = tmp_path / "out"
    # frank_wolfe eta_0 = 2/(3*lambda) = 2R/3 differs across seeds with "auto"
    etas = []
    for seed in (0, 1):
        tr = Trace.from_csv(out / f"tiny_seed{seed}.csv")
        etas.append(tr.eta[0])
    assert etas[0] != etas[1]


# --- verify-lemma ------------------------------------------------------------------


def test_verify_lemma_small(capsys):
    assert main(["verify-lemma", "--n-max", "2", "--grid", "50"]) == 0
    out = capsys.readouterr().out
    assert "worst gap" in out
    assert "OK" in out
    # n=1 rows are the trivial kappa*R case
    assert out.count("0.6") >= 2


def test_verify_lemma_rejects_large_n(capsys):
    assert main(["verify-lemma", "--n-max", "6"]) == 2


# --- rip-check ---------------------------------------------------------------------


def test_rip_check_reports_three_ranks(tmp_path, capsys):
    cfg = {"problem": {"kind": "lad_sensing", "n1": 12, "n2": 12, "r": 2, "m": 400, "seed": 0}}
    path = write_config(tmp_path, cfg, "rip.json")
    assert main(["rip-check", path, "--trials", "40"]) == 0
    out = capsys.readouterr().out
    assert "delta_hat" in out
    assert "delta_(5r) < 0.08" in out


def test_rip_check_tiny_m_flags_infeasible(tmp_path, capsys):
    cfg = {"problem": {"kind": "lad_sensing", "n1": 12, "n2": 12, "r": 2, "m": 10, "seed": 0}}
    path = write_config(tmp_path, cfg, "rip_tiny.json")
    assert main(["rip-check", path, "--trials", "40"]) == 0
    assert "NOT satisfied" in capsys.readouterr().out


def test_rip_check_deterministic(tmp_path, capsys):
    cfg = {"problem": {"kind": "lad_sensing", "n1": 10, "n2": 10, "r": 1, "m": 80, "seed": 3}}
    path = write_config(tmp_path, cfg, "rip_det.json")
    assert main(["rip-check", path, "--trials", "30"]) == 0
    first = capsys.readouterr().out
    assert main(["rip-check", path, "--trials", "30"]) == 0
    assert capsys.readouterr().out == first


# --- analyze -----------------------------------------------------------------------


def test_analyze_emits_report_json(tmp_path, capsys):
    cfg = tiny_sensing_config(tmp_path)
    path = write_config(tmp_path, cfg)
    assert main(["run", path]) == 0
    capsys.readouterr()
    trace_path = str(tmp_path / "out" / "tiny_seed0.csv")
    assert main(["analyze", trace_path, "--fstar", "0.0"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) == {
        "gamma_hat", "slope", "r_squared", "mu_hat", "L_hat", "kappa_hat", "min_alignment",
    }
    assert report["mu_hat"] is not None


def test_analyze_missing_file(capsys):
    assert main(["analyze", "/nonexistent/trace.csv"]) == 2
