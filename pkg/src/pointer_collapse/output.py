"""File output: CSV tables, a JSON summary with the run manifest, SVG figures.

File names embed the config hash. CSV and JSON contain nothing that
depends on wall-clock time, the worker count or the output directory, so
reruns are byte-identical.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .config import config_hash, from_dict, to_dict
from .errors import ConfigurationError
from .experiments import RunResult

SVG_SALT = "pointer-collapse"


def _num(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if v.is_integer() and abs(v) < 2 ** 63:
        return str(int(v))
    return repr(v)


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, NaN/inf to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def manifest_config(result: RunResult) -> dict:
    d = to_dict(result.config)
    d["output"].pop("directory")
    return d


def result_json(result: RunResult) -> str:
    man = result.manifest()
    man["config"] = manifest_config(result)
    doc = {"manifest": man, "summary": result.summary, "passed": result.passed,
           "checks": [{"name": c.name, "observed": c.observed, "expected": c.expected, "passed": c.passed,
                       "detail": c.detail} for c in result.checks]}
    return json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def table_csv(columns, data) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in np.atleast_2d(np.asarray(data, dtype=float)) if len(data) else []:
        w.writerow([_num(v) for v in row])
    return buf.getvalue()


def render_svg(fig_spec, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for label, y in fig_spec.series.items():
            hl = label == fig_spec.highlight
            ax.plot(fig_spec.x, y, label=label, lw=1.0 if hl else 1.8, alpha=0.8 if hl else 1.0,
                    ls="--" if hl else "-")
        ax.set_xlabel(fig_spec.xlabel)
        ax.set_ylabel(fig_spec.ylabel)
        if fig_spec.logy:
            ax.set_yscale("log")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def emit(result: RunResult, outdir: str | Path | None = None, formats=None) -> list[Path]:
    """Write the result files and return their paths."""
    outdir = Path(outdir if outdir is not None else result.config.output.directory)
    formats = tuple(formats if formats is not None else result.config.output.formats)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {outdir}: {exc}") from exc
    base = f"{result.command}_{config_hash(result.config)}"
    written = []
    try:
        if "csv" in formats:
            for name, (cols, data) in result.tables.items():
                p = outdir / (base + (f"_{name}" if name else "") + ".csv")
                p.write_text(table_csv(cols, data))
                written.append(p)
        if "json" in formats:
            p = outdir / f"{base}.json"
            p.write_text(result_json(result))
            written.append(p)
        if "svg" in formats:
            for fig in result.figures:
                p = outdir / f"{base}.svg" if fig.name == result.command else outdir / f"{base}_{fig.name}.svg"
                render_svg(fig, p)
                written.append(p)
    except OSError as exc:
        raise ConfigurationError(f"cannot write to output directory {outdir}: {exc}") from exc
    return written


def load_manifest(path: str | Path):
    """(command, RunConfig) from a JSON result file written by ``emit``."""
    doc = json.loads(Path(path).read_text())
    man = doc["manifest"]
    cfg = from_dict(man["config"])
    if config_hash(cfg) != man["config_hash"]:
        raise ConfigurationError("manifest config does not match its recorded hash")
    return man["command"], cfg
