"""Renderer tests over synthetic trace CSVs — no solver machinery involved."""
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO))

from plots.render import RenderError, _load_curve, load_trace_csv, main, render

HEADER = "t,f,dist,grad_fro,alignment,spec_norm,nuc_norm,eta"


def write_trace(path, n_rows=60, f0=2.0, dist0=1.0, blank_alignment=False):
    lines = [HEADER]
    for t in range(n_rows):
        f = f0 * 0.9**t
        dist = dist0 * 0.92**t
        align = "" if blank_alignment else format(0.5 + 0.001 * t, ".17g")
        lines.append(
            f"{t},{format(f, '.17g')},{format(dist, '.17g')},{format(0.3, '.17g')},"
            f"{align},{format(1.0, '.17g')},{format(2.0, '.17g')},{format(0.1, '.17g')}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_spec(path, spec):
    Path(path).write_text(json.dumps(spec, indent=2) + "\n")


@pytest.fixture()
def trace_dir(tmp_path):
    for seed in range(3):
        write_trace(tmp_path / f"demo_seed{seed}.csv", n_rows=60 - 5 * seed)
    return tmp_path


def test_load_trace_csv_blank_cells_become_nan(tmp_path):
    write_trace(tmp_path / "a.csv", n_rows=4, blank_alignment=True)
    table = load_trace_csv(tmp_path / "a.csv")
    assert set(table) == set(HEADER.split(","))
    assert np.all(np.isnan(table["alignment"]))
    assert table["t"][-1] == 3.0


def test_load_trace_csv_rejects_foreign_header(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b,c\n1,2,3\n")
    with pytest.raises(RenderError, match="bad.csv"):
        load_trace_csv(tmp_path / "bad.csv")


def test_load_curve_means_and_truncates(trace_dir):
    curve = {"files": "demo_seed*.csv", "scale": 2.0}
    seeds, (mean_t, mean_y) = _load_curve(curve, "dist", trace_dir)
    assert len(seeds) == 3
    # truncated to the shortest seed (50 rows) and averaged in linear space
    assert len(mean_t) == 50
    assert mean_y[0] == pytest.approx(2.0 * 1.0)
    assert mean_y[7] == pytest.approx(2.0 * 0.92**7)


def test_load_curve_empty_glob_names_pattern(trace_dir):
    with pytest.raises(RenderError, match="nothing_\\*.csv"):
        _load_curve({"files": "nothing_*.csv"}, "dist", trace_dir)


def test_missing_column_names_column_and_file(trace_dir):
    spec = {
        "output": "fig.png",
        "panels": [{"column": "bogus", "curves": [{"files": "demo_seed*.csv"}]}],
    }
    with pytest.raises(RenderError, match="'bogus'.*demo_seed0.csv"):
        render(spec, trace_dir)


def test_malformed_panels_are_diagnosed_not_tracebacks(trace_dir):
    # column accidentally placed inside the curve instead of the panel
    spec = {
        "output": "fig.png",
        "panels": [{"title": "loss", "curves": [{"files": "demo_seed*.csv", "column": "f"}]}],
    }
    with pytest.raises(RenderError, match="'column'"):
        render(spec, trace_dir)
    spec = {"output": "fig.png", "panels": [{"column": "f", "curves": [{"label": "x"}]}]}
    with pytest.raises(RenderError, match="'files'"):
        render(spec, trace_dir)
    spec = {
        "output": "fig.png",
        "panels": [{"column": "f", "curves": [{"files": "demo_seed*.csv"}],
                    "reference_lines": [{"label": "floor only"}]}],
    }
    with pytest.raises(RenderError, match="reference line"):
        render(spec, trace_dir)
    spec = {
        "output": "fig.png",
        "inset": {"panel": 0},
        "panels": [{"column": "f", "curves": [{"files": "demo_seed*.csv"}]}],
    }
    with pytest.raises(RenderError, match="window"):
        render(spec, trace_dir)


def test_single_panel_smoke(trace_dir):
    spec = {
        "output": "fig.png",
        "panels": [
            {
                "title": "loss",
                "column": "f",
                "yscale": "log",
                "curves": [{"label": "demo", "files": "demo_seed0.csv"}],
            }
        ],
    }
    out = render(spec, trace_dir)
    assert out.exists() and out.stat().st_size > 0


def test_reference_lines_literal_summary_and_envelope(trace_dir):
    (trace_dir / "summary.json").write_text(json.dumps({"floor": 0.25, "runs": [{"final_f": 0.5}]}))
    spec = {
        "output": "fig.png",
        "panels": [
            {
                "column": "dist",
                "yscale": "log",
                "curves": [{"label": "demo", "files": "demo_seed*.csv"}],
                "reference_lines": [
                    {"y": 0.1, "label": "floor"},
                    {"summary": "summary.json", "key": "floor", "label": "fit floor"},
                    {"summary": "summary.json", "key": "runs.0.final_f", "label": "final"},
                    {"envelope": [[0, 30], [1.0, 0.05]], "label": "bound"},
                ],
            }
        ],
    }
    assert render(spec, trace_dir).exists()


def test_reference_line_bad_key_is_diagnosed(trace_dir):
    (trace_dir / "summary.json").write_text(json.dumps({"floor": 0.25}))
    spec = {
        "output": "fig.png",
        "panels": [
            {
                "column": "dist",
                "curves": [{"files": "demo_seed0.csv"}],
                "reference_lines": [{"summary": "summary.json", "key": "nope.deep"}],
            }
        ],
    }
    with pytest.raises(RenderError, match="nope.deep"):
        render(spec, trace_dir)


def test_grid_too_small_is_rejected(trace_dir):
    panel = {"column": "f", "curves": [{"files": "demo_seed0.csv"}]}
    spec = {"output": "fig.png", "grid": [1, 1], "panels": [panel, panel]}
    with pytest.raises(RenderError, match="grid 1x1"):
        render(spec, trace_dir)


def test_inset_window(trace_dir):
    spec = {
        "output": "fig.png",
        "inset": {"panel": 0, "window": [0, 20]},
        "panels": [
            {
                "column": "dist",
                "yscale": "log",
                "curves": [{"label": "demo", "files": "demo_seed*.csv"}],
            }
        ],
    }
    assert render(spec, trace_dir).exists()


def test_rerender_is_byte_identical(trace_dir):
    spec = {
        "output": "fig.png",
        "inset": {"panel": 0, "window": [0, 20]},
        "panels": [
            {
                "column": "dist",
                "yscale": "log",
                "curves": [{"label": "demo", "files": "demo_seed*.csv"}],
                "reference_lines": [{"y": 0.1, "label": "floor"}],
            }
        ],
    }
    spec_path = trace_dir / "fig.json"
    write_spec(spec_path, spec)
    assert main([str(spec_path)]) == 0
    first = (trace_dir / "fig.png").read_bytes()
    assert main([str(spec_path)]) == 0
    assert (trace_dir / "fig.png").read_bytes() == first


def test_script_interface_subprocess(trace_dir):
    spec = {
        "output": "sub.png",
        "panels": [{"column": "f", "yscale": "log", "curves": [{"files": "demo_seed*.csv"}]}],
    }
    spec_path = trace_dir / "sub.json"
    write_spec(spec_path, spec)
    script = REPO / "plots" / "render.py"
    runs = [
        subprocess.run(
            [sys.executable, str(script), str(spec_path)], capture_output=True, text=True
        )
        for _ in range(2)
    ]
    for proc in runs:
        assert proc.returncode == 0, proc.stderr
        assert proc.stdout.strip().endswith("sub.png")
    assert (trace_dir / "sub.png").stat().st_size > 0


def test_main_bad_inputs(tmp_path, capsys):
    assert main([str(tmp_path / "absent.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main([str(bad)]) == 2
    empty = tmp_path / "empty.json"
    write_spec(empty, {"output": "x.png", "panels": []})
    assert main([str(empty)]) == 2
    err = capsys.readouterr().err
    assert "absent.json" in err and "panels" in err
