"""Render multi-panel figures from experiment trace CSVs.

Usage: ``python3 plots/render.py <figure_spec.json>``

The figure spec is a JSON object; all relative paths inside it resolve
against the directory containing the figure-spec file.

Schema::

    {
      "output": "figure.png",
      "dpi": 150,                      # optional, default 150
      "figsize": [12.0, 3.4],          # optional, inches
      "grid": [1, 3],                  # optional [rows, cols]; default one row
      "inset": {                       # optional early-iteration zoom
        "panel": 0,                    # panel index that carries the inset
        "window": [0, 3000],           # t-range shown in the inset
        "rect": [0.42, 0.42, 0.53, 0.5]   # optional axes-fraction placement
      },
      "panels": [
        {
          "title": "relative error",
          "column": "dist",            # trace column on the y axis
          "yscale": "log",             # "log" or "linear"
          "ylabel": "...",             # optional, defaults to the column name
          "curves": [
            {
              "label": "noiseless",
              "files": "results/noiseless/*_seed*.csv",   # glob, >=1 match
              "scale": 1.0,            # y multiplier (e.g. 1/||reference||)
              "offset": 0.0            # subtracted before scaling
            }
          ],
          "reference_lines": [         # optional, three forms
            {"y": 0.27, "label": "noise floor"},
            {"summary": "results/mixed/summary.json", "key": "floor",
             "label": "fit floor"},
            {"envelope": [[0, 100], [1.0, 0.1]], "label": "rate bound"}
          ]
        }
      ]
    }

Each curve draws one faint line per seed file plus a bold mean-over-seeds
line (arithmetic mean, truncated to the shortest seed).  Rendering is a
pure function of the input files: file globs are sorted and the PNG
metadata is pinned, so re-rendering the same inputs reproduces the output
byte for byte.
"""
from __future__ import annotations

import glob as globlib
import json
import math
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

TRACE_COLUMNS = ("t", "f", "dist", "grad_fro", "alignment", "spec_norm", "nuc_norm", "eta")

_REFERENCE_STYLE = {"color": "0.35", "linestyle": "--", "linewidth": 1.0}


class RenderError(Exception):
    """Figure spec or input-file problem; the message names the offender."""


def load_trace_csv(path) -> dict:
    """Parse one trace CSV into {column: float array}; empty cells become NaN."""
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    names = data.dtype.names or ()
    if tuple(names) != TRACE_COLUMNS:
        raise RenderError(f"{path}: expected trace header {','.join(TRACE_COLUMNS)}, found {','.join(names)}")
    data = np.atleast_1d(data)
    return {name: np.asarray(data[name], dtype=float) for name in names}


def _resolve(path_text: str, base: Path) -> Path:
    p = Path(path_text)
    return p if p.is_absolute() else base / p


def _dotted_lookup(obj, key: str):
    node = obj
    for part in key.split("."):
        if isinstance(node, dict):
            if part not in node:
                raise RenderError(f"summary key '{key}' missing at '{part}'")
            node = node[part]
        elif isinstance(node, list):
            try:
                node = node[int(part)]
            except (ValueError, IndexError) as exc:
                raise RenderError(f"summary key '{key}' has bad list index '{part}'") from exc
        else:
            raise RenderError(f"summary key '{key}' descends past a leaf at '{part}'")
    return node


def _reference_value(entry: dict, base: Path) -> float:
    if "y" in entry:
        value = entry["y"]
    elif "summary" not in entry or "key" not in entry:
        raise RenderError(
            "reference line needs 'y', 'envelope', or a 'summary' path with a 'key'"
        )
    else:
        summary_path = _resolve(entry["summary"], base)
        try:
            with open(summary_path) as fh:
                summary = json.load(fh)
        except OSError as exc:
            raise RenderError(f"cannot read summary {summary_path}: {exc}") from exc
        value = _dotted_lookup(summary, entry["key"])
    if not isinstance(value, (int, float)) or not math.isfinite(float(value)):
        raise RenderError(f"reference line value {value!r} is not a finite number")
    return float(value)


def _load_curve(curve: dict, column: str, base: Path):
    """Sorted per-seed (t, y) arrays for one curve, plus the mean pair."""
    if "files" not in curve:
        raise RenderError(f"curve {curve.get('label', '?')!r} has no 'files' glob")
    pattern = str(_resolve(curve["files"], base))
    paths = sorted(globlib.glob(pattern))
    if not paths:
        raise RenderError(f"no files match '{curve['files']}' (resolved to {pattern})")
    scale = float(curve.get("scale", 1.0))
    offset = float(curve.get("offset", 0.0))
    seeds = []
    for path in paths:
        table = load_trace_csv(path)
        if column not in table:
            raise RenderError(f"column '{column}' not found in {path}")
        seeds.append((table["t"], (table[column] - offset) * scale))
    shortest = min(len(t) for t, _ in seeds)
    stack = np.vstack([y[:shortest] for _, y in seeds])
    mean_t = seeds[0][0][:shortest]
    return seeds, (mean_t, stack.mean(axis=0))


def _plot_panel(ax, panel: dict, base: Path, window=None, decorate=True):
    if "column" not in panel:
        raise RenderError(
            f"panel {panel.get('title', '?')!r} has no 'column' (the trace column is "
            "set per panel, not per curve)"
        )
    column = panel["column"]
    for idx, curve in enumerate(panel.get("curves", [])):
        color = f"C{idx}"
        seeds, (mean_t, mean_y) = _load_curve(curve, column, base)
        for t, y in seeds:
            ax.plot(t, y, color=color, alpha=0.25, linewidth=0.8)
        ax.plot(mean_t, mean_y, color=color, linewidth=1.8, label=curve.get("label"))
    for entry in panel.get("reference_lines", []):
        label = entry.get("label") if decorate else None
        if "envelope" in entry:
            t_env, y_env = entry["envelope"]
            ax.plot(t_env, y_env, label=label, **_REFERENCE_STYLE)
        else:
            ax.axhline(_reference_value(entry, base), label=label, **_REFERENCE_STYLE)
    ax.set_yscale(panel.get("yscale", "linear"))
    if window is not None:
        ax.set_xlim(window[0], window[1])
    if decorate:
        ax.set_title(panel.get("title", column))
        ax.set_xlabel(panel.get("xlabel", "iteration"))
        ax.set_ylabel(panel.get("ylabel", column))
        if any(c.get("label") for c in panel.get("curves", [])):
            ax.legend(fontsize="small")


def render(spec: dict, base: Path) -> Path:
    """Draw every panel of the figure spec and write the raster image."""
    panels = spec.get("panels")
    if not panels:
        raise RenderError("figure spec has no panels")
    if "output" not in spec:
        raise RenderError("figure spec has no output path")
    rows, cols = spec.get("grid", (1, len(panels)))
    if rows * cols < len(panels):
        raise RenderError(f"grid {rows}x{cols} cannot hold {len(panels)} panels")
    figsize = spec.get("figsize", (4.0 * cols, 3.2 * rows))
    fig, axes = plt.subplots(rows, cols, figsize=figsize, squeeze=False)
    flat = axes.ravel()
    for ax in flat[len(panels):]:
        ax.set_axis_off()
    for i, panel in enumerate(panels):
        _plot_panel(flat[i], panel, base)

    inset = spec.get("inset")
    if inset is not None:
        host_index = int(inset.get("panel", 0))
        if not 0 <= host_index < len(panels):
            raise RenderError(f"inset panel index {host_index} out of range")
        if "window" not in inset:
            raise RenderError("inset needs a 'window' [t_lo, t_hi]")
        host = flat[host_index]
        rect = inset.get("rect", (0.42, 0.42, 0.53, 0.5))
        child = host.inset_axes(rect)
        _plot_panel(child, panels[host_index], base, window=inset["window"], decorate=False)
        child.tick_params(labelsize="x-small")

    fig.tight_layout()
    out = _resolve(spec["output"], base)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=spec.get("dpi", 150), metadata={"Software": "trace renderer"})
    plt.close(fig)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if len(argv) != 1:
        print("usage: render.py <figure_spec.json>", file=sys.stderr)
        return 2
    spec_path = Path(argv[0])
    try:
        with open(spec_path) as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot load figure spec {spec_path}: {exc}", file=sys.stderr)
        return 2
    try:
        out = render(spec, spec_path.resolve().parent)
    except RenderError as exc:
        print(f"render failed: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
