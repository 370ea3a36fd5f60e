"""Command-line front end: scan, thermo, weights, peaks.

All numerics live in the library modules; this module only parses
configuration, wires the pipeline together and writes artifacts.  Every data
artifact is reproducible byte-for-bit from the resolved config and seed, so
timing information goes to a separate log file.

Exit codes: 0 success, 2 validation failure, 3 model or remote failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import divergence, scan, thermo, weights
from .models import AxisKind, ModelEndpoint, ModelError, RemoteModel, TabularModel

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_MODEL = 3
EXIT_IO = 4

CONFIG_VERSION = 1

ENDPOINT_ENV = "TRANSITION_BRIDGE_URL"

_DEFAULT_L = {
    AxisKind.PROMPT_SLOT: [3],
    AxisKind.TEMPERATURE: [5],
    AxisKind.CHECKPOINT: [1, 6],
}

_DEFAULT_TEMPERATURE_RANGE = (1e-4, 2.0)


class ConfigError(ValueError):
    """The run configuration is inconsistent or incomplete."""


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        _fail(str(exc), EXIT_VALIDATION)
    except ModelError as exc:
        _fail(str(exc), EXIT_MODEL)
    except weights.DumpFormatError as exc:
        _fail(str(exc), EXIT_IO)
    except ValueError as exc:
        _fail(str(exc), EXIT_VALIDATION)
    except OSError as exc:
        _fail(str(exc), EXIT_IO)
    return EXIT_OK


def _fail(message: str, code: int):
    json.dump({"error": message, "exit_code": code}, sys.stderr)
    sys.stderr.write("\n")
    raise SystemExit(code)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phasescan",
        description="Locate abrupt output-distribution changes of a generative model "
        "along a prompt, temperature or checkpoint axis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides config out_dir)")
        p.add_argument(
            "--g",
            action="append",
            choices=sorted(divergence.BUILTIN_G),
            help="dissimilarity g-function, repeatable",
        )
        p.add_argument("--L", action="append", type=int, help="segment half-width, repeatable")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")

    p_scan = sub.add_parser("scan", help="dissimilarity scan over the configured axis")
    add_common(p_scan)
    p_scan.set_defaults(handler=cmd_scan)

    p_thermo = sub.add_parser(
        "thermo", help="temperature scan plus mean energy and heat capacity"
    )
    add_common(p_thermo)
    p_thermo.set_defaults(handler=cmd_thermo)

    p_weights = sub.add_parser(
        "weights", help="exact dissimilarity over checkpoint weight histograms"
    )
    p_weights.add_argument(
        "--manifest", action="append", required=True, help="layer manifest JSON, repeatable"
    )
    p_weights.add_argument("--out", required=True, help="output directory")
    p_weights.add_argument(
        "--g", action="append", choices=sorted(divergence.BUILTIN_G)
    )
    p_weights.add_argument("--L", action="append", type=int)
    p_weights.add_argument("--bins", type=int, default=weights.DEFAULT_BIN_COUNT)
    p_weights.add_argument(
        "--range", nargs=2, type=float, default=list(weights.DEFAULT_RANGE),
        metavar=("LO", "HI"),
    )
    p_weights.set_defaults(handler=cmd_weights)

    p_peaks = sub.add_parser("peaks", help="peak report for an existing curve CSV")
    p_peaks.add_argument("--curve", required=True, help="curve CSV produced by scan/thermo")
    p_peaks.add_argument("--min-prominence-sigmas", type=float, default=5.0)
    p_peaks.add_argument(
        "--config",
        help="scan config; enables the outlier diagnostic by rebuilding the sample store",
    )
    p_peaks.add_argument("--out", help="write the report here instead of stdout")
    p_peaks.set_defaults(handler=cmd_peaks)
    return parser


# -- configuration ---------------------------------------------------------


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if cfg.get("version") != CONFIG_VERSION:
        raise ConfigError(f"{path}: expected \"version\": {CONFIG_VERSION}")
    return cfg


def resolve_config(cfg: dict, args, apply_out: bool = True) -> dict:
    """Merge CLI overrides into the config and fill defaults."""
    out = dict(cfg)
    axis = dict(out.get("axis") or {})
    try:
        kind = AxisKind(axis.get("kind"))
    except ValueError:
        raise ConfigError(
            f"axis.kind must be one of {[k.value for k in AxisKind]}, got {axis.get('kind')!r}"
        ) from None
    if kind is AxisKind.TEMPERATURE:
        axis.setdefault("start", _DEFAULT_TEMPERATURE_RANGE[0])
        axis.setdefault("stop", _DEFAULT_TEMPERATURE_RANGE[1])
    for fld in ("start", "stop", "n_points"):
        if fld not in axis:
            raise ConfigError(f"axis.{fld} missing")
    out["axis"] = axis
    if getattr(args, "g", None):
        out["g"] = list(args.g)
    out.setdefault("g", ["linear"])
    if getattr(args, "L", None):
        out["L"] = [int(v) for v in args.L]
    out.setdefault("L", list(_DEFAULT_L[kind]))
    if getattr(args, "seed", None) is not None:
        out["seed"] = int(args.seed)
    out.setdefault("seed", 0)
    out.setdefault("n_batches", 4)
    out.setdefault("n_samples", 1024)
    out.setdefault("n_tokens", 10)
    out.setdefault("min_prominence_sigmas", 5.0)
    if apply_out:
        if getattr(args, "out", None):
            out["out_dir"] = args.out
        if not out.get("out_dir"):
            raise ConfigError("no output directory (config out_dir or --out)")
    for fld in ("n_samples", "n_tokens", "seed", "n_batches"):
        if not isinstance(out[fld], int):
            raise ConfigError(f"{fld} must be an integer")
    if out["n_samples"] % out["n_batches"] != 0:
        raise ConfigError(
            f"n_batches={out['n_batches']} must divide n_samples={out['n_samples']}"
        )
    return out


def build_model(cfg: dict):
    model_cfg = cfg.get("model") or {}
    if "tabular_file" in model_cfg:
        return TabularModel.from_json(model_cfg["tabular_file"])
    url = model_cfg.get("endpoint") or os.environ.get(ENDPOINT_ENV)
    if not url:
        raise ConfigError(
            "model requires either model.tabular_file or model.endpoint "
            f"(or the {ENDPOINT_ENV} environment variable)"
        )
    endpoint = ModelEndpoint(
        base_url=url,
        model_id=model_cfg.get("model_id", ""),
        revision=model_cfg.get("revision", "main"),
        request_timeout=float(model_cfg.get("request_timeout", 120.0)),
        max_in_flight=int(model_cfg.get("max_in_flight", 1)),
    )
    return RemoteModel(
        endpoint,
        base_prompt=model_cfg.get("base_prompt", ""),
        revision_template=model_cfg.get("revision_template", "step{value}"),
        cache_dir=model_cfg.get("cache_dir"),
        default_temperature=float(model_cfg.get("default_temperature", 1.0)),
    )


def build_grids(cfg: dict) -> dict[int, scan.ParameterGrid]:
    """One grid per configured L, all sharing the same points; validated up front."""
    axis = cfg["axis"]
    kind = AxisKind(axis["kind"])
    grids = {}
    for L in cfg["L"]:
        grids[L] = scan.build_grid(
            kind,
            axis["start"],
            axis["stop"],
            int(axis["n_points"]),
            int(L),
            prompt_template=cfg.get("prompt_template"),
        )
    return grids


# -- artifact helpers --------------------------------------------------------


def _write_text(path, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path, doc) -> None:
    _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _manifest_doc(cfg: dict, store: scan.SampleStore, artifacts: list[str]) -> dict:
    return {
        "config": cfg,
        "point_seeds": {str(p.value): s for p, s in sorted(store.seeds.items(), key=lambda kv: float(kv[0].value))},
        "artifacts": sorted(artifacts),
    }


def _run_curves(cfg: dict, model, grids, store) -> tuple[list[str], dict]:
    """Stage-2 curves, peak reports and artifact bookkeeping shared by scan/thermo."""
    out_dir = cfg["out_dir"]
    artifacts = []
    curves = {}
    for L, grid in sorted(grids.items()):
        for g_name in cfg["g"]:
            g = divergence.resolve_g(g_name)
            curve = scan.run_scan(
                model,
                grid,
                g,
                cfg["n_samples"],
                cfg["n_tokens"],
                cfg["seed"],
                cfg["n_batches"],
                store=store,
            )
            curves[(g_name, L)] = curve
            stem = f"curve-{g_name}-L{L}"
            curve_csv = os.path.join(out_dir, stem + ".csv")
            _write_text(curve_csv, curve.to_csv_text())
            _write_json(os.path.join(out_dir, stem + ".json"), curve.to_json_doc())
            report = scan.detect_peaks(curve, cfg["min_prominence_sigmas"])
            report = scan.annotate_outliers(report, store, grid, g)
            _write_json(os.path.join(out_dir, f"peaks-{g_name}-L{L}.json"), report.to_json_doc())
            artifacts += [stem + ".csv", stem + ".json", f"peaks-{g_name}-L{L}.json"]
    return artifacts, curves


# -- commands ---------------------------------------------------------------


def cmd_scan(args) -> int:
    t0 = time.monotonic()
    cfg = resolve_config(load_config(args.config), args)
    grids = build_grids(cfg)
    model = build_model(cfg)
    first_grid = next(iter(grids.values()))
    store = scan.stage1_generate(
        model, first_grid, cfg["n_samples"], cfg["n_tokens"], cfg["seed"]
    )
    artifacts, _ = _run_curves(cfg, model, grids, store)
    out_dir = cfg["out_dir"]
    _write_json(os.path.join(out_dir, "manifest.json"), _manifest_doc(cfg, store, artifacts))
    _write_text(
        os.path.join(out_dir, "run.log"),
        f"command=scan elapsed_seconds={time.monotonic() - t0:.3f}\n",
    )
    return EXIT_OK


def cmd_thermo(args) -> int:
    t0 = time.monotonic()
    cfg = resolve_config(load_config(args.config), args)
    if AxisKind(cfg["axis"]["kind"]) is not AxisKind.TEMPERATURE:
        raise ConfigError("thermo requires a temperature axis")
    grids = build_grids(cfg)
    model = build_model(cfg)
    first_grid = next(iter(grids.values()))
    store = scan.stage1_generate(
        model, first_grid, cfg["n_samples"], cfg["n_tokens"], cfg["seed"]
    )
    artifacts, curves = _run_curves(cfg, model, grids, store)
    thermal = thermo.mean_energy_curve(
        model,
        first_grid,
        cfg["n_samples"],
        cfg["n_tokens"],
        cfg["seed"],
        cfg["n_batches"],
        store=store,
    )
    thermal = thermo.heat_capacity(thermal)
    out_dir = cfg["out_dir"]
    _write_text(os.path.join(out_dir, "thermal.csv"), thermal.to_csv_text())
    artifacts.append("thermal.csv")
    for (g_name, L), curve in sorted(curves.items()):
        overlay = _overlay_text(curve, thermal)
        name = f"overlay-{g_name}-L{L}.csv"
        _write_text(os.path.join(out_dir, name), overlay)
        artifacts.append(name)
    _write_json(os.path.join(out_dir, "manifest.json"), _manifest_doc(cfg, store, artifacts))
    _write_text(
        os.path.join(out_dir, "run.log"),
        f"command=thermo elapsed_seconds={time.monotonic() - t0:.3f}\n",
    )
    return EXIT_OK


def _overlay_text(curve: scan.DissimilarityCurve, thermal: thermo.ThermalCurve) -> str:
    """Dissimilarity and heat capacity on the shared trial-value abscissa.

    The heat capacity lives at interior grid temperatures; it is linearly
    interpolated onto trial values, left empty where no two-sided
    neighborhood exists.
    """
    t = np.asarray(thermal.temperatures)
    interior = t[1:-1]
    hc = np.asarray(thermal.heat_capacity)
    lines = ["trial_value,dissimilarity,heat_capacity"]
    for tv, est in zip(curve.trial_values, curve.estimates):
        if interior[0] <= tv <= interior[-1]:
            c = "%.17g" % float(np.interp(tv, interior, hc))
        else:
            c = ""
        lines.append("%.17g,%.17g,%s" % (tv, est, c))
    return "\n".join(lines) + "\n"


def cmd_weights(args) -> int:
    g_names = args.g or ["linear"]
    l_values = [int(v) for v in (args.L or [1])]
    lo, hi = args.range
    out_dir = args.out
    report = {"layers": []}
    for manifest_path in args.manifest:
        series = weights.series_from_manifest(manifest_path, args.bins, lo, hi)
        for g_name in g_names:
            g = divergence.resolve_g(g_name)
            for L in l_values:
                curve = weights.series_dissimilarity(series, g, L)
                stem = f"weights-{series.layer_label}-{g_name}-L{L}"
                _write_text(os.path.join(out_dir, stem + ".csv"), curve.to_csv_text())
                peak_idx = int(np.argmax(curve.estimates))
                report["layers"].append(
                    {
                        "layer": series.layer_label,
                        "g": g_name,
                        "L": L,
                        "curve_file": stem + ".csv",
                        "max_trial_value": curve.trial_values[peak_idx],
                        "max_estimate": curve.estimates[peak_idx],
                    }
                )
    _write_json(os.path.join(out_dir, "weights-report.json"), report)
    return EXIT_OK


def cmd_peaks(args) -> int:
    curve = scan.DissimilarityCurve.read_csv(args.curve)
    report = scan.detect_peaks(curve, args.min_prominence_sigmas)
    if args.config:
        cfg = resolve_config(load_config(args.config), args, apply_out=False)
        grids = build_grids(cfg)
        grid = grids.get(curve.L)
        if grid is None:
            grid = next(iter(grids.values())).with_l(curve.L)
        model = build_model(cfg)
        store = scan.stage1_generate(
            model, grid, cfg["n_samples"], cfg["n_tokens"], cfg["seed"]
        )
        g = divergence.resolve_g(curve.g_label)
        report = scan.annotate_outliers(report, store, grid, g)
    doc = report.to_json_doc()
    if args.out:
        _write_json(args.out, doc)
    else:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
