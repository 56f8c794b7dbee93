"""Command-line harness: ``python -m cesp <command> [flags]``.

Every command writes its CSV outputs next to ``manifest.json`` and
``run.cfg``.  ``run.cfg`` holds the fully resolved settings, so
``python -m cesp <command> --config OUT/run.cfg`` reproduces the CSVs
byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import VERDICTS, GridSpec, classify_point, stationarity_equivalence_scan
from .basin import UNRESOLVED, basin_raster
from .dynamics import METHODS, OptimizerConfig, run_trajectory
from .experiments import INIT_SCALE, ROBUST_DEFAULTS, robust_start, run_robust_seed, success_fraction
from .problems import TOY_CRITICAL_POINTS, ProblemError, quadratic_saddle, robust_mlp_problem, toy_problem
from .spectral import PowerIterConfig

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_MAX_ITERS = 2
EXIT_DIVERGED = 3
EXIT_USAGE = 64
EXIT_UNKNOWN_PROBLEM = 65


class UsageError(Exception):
    def __init__(self, message, parser=None):
        super().__init__(message)
        self.parser = parser


class UnknownProblem(Exception):
    pass


# --------------------------------------------------------------------------
# problems and parameter parsing


def parse_value(text: str):
    """int, float, vector ``1,2`` or matrix ``1,0;0,1``; otherwise the raw string."""
    text = text.strip()
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if "," in text or ";" in text:
        try:
            rows = [[float(v) for v in r.split(",")] for r in text.split(";")]
        except ValueError:
            return text
        return rows[0] if ";" not in text else rows
    return text


def parse_point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in str(text).split(",")])
    except ValueError:
        raise UsageError(f"bad point {text!r}; expected comma-separated numbers") from None


def build_problem(name: str, params: dict, seed: int = 0):
    """Problem by name; ``seed`` picks the robust-mlp dataset."""
    factories = {"toy": toy_problem, "quad": quadratic_saddle, "robust-mlp": robust_mlp_problem}
    if name not in factories:
        raise UnknownProblem(name)
    kwargs = dict(params)
    if name == "robust-mlp":
        kwargs["seed"] = seed
    if name == "quad":
        for key in ("A", "B", "C"):
            if key not in kwargs:
                raise UsageError("problem 'quad' needs A, B and C (e.g. A=2,0;0,2)")
            kwargs[key] = np.atleast_2d(np.asarray(kwargs[key], float))
    try:
        return factories[name](**kwargs)
    except TypeError as exc:
        raise UsageError(f"bad parameters for problem {name!r}: {exc}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# --------------------------------------------------------------------------
# settings: defaults < config file < flags

# key -> (type, default); None default means "required or derived"
_COMMON = {
    "problem": (str, "toy"),
    "method": (str, "gda"),
    "eta": (float, 1e-3),
    "max_iters": (int, 50_000),
    "grad_tol": (float, 1e-8),
    "noise_sigma": (float, 0.0),
    "seed": (int, 0),
    "curvature": (str, "dense"),
    "spectrum_stride": (int, 10),
    "out": (str, "cesp-out"),
}
_SPECIFIC = {
    "trajectory": {"start": (str, None)},
    # classify only writes files when an output directory is given
    "classify": {"point": (str, None), "expect": (str, None), "tol": (float, 1e-6), "out": (str, None)},
    "scan": {"grid": (str, "-4:4:161"), "tol": (float, 1e-6), "disp_tol": (float, 1e-9)},
    "basin": {"grid": (str, "-4:4:161"), "attractors": (str, None), "match_radius": (float, 1e-2)},
    "robust": {"seeds": (int, 20), "init_scale": (float, INIT_SCALE)},
}
_COMMAND_DEFAULTS = {
    "basin": {"max_iters": 200_000},
    "robust": {"problem": "robust-mlp", "method": "cesp", **ROBUST_DEFAULTS},
}


def read_config(path: str) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path!r}: {exc.strerror}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_settings(command: str, flags: dict) -> tuple[dict, dict]:
    """Merge defaults, config file and flags; returns ``(settings, problem_params)``."""
    known = {**_COMMON, **_SPECIFIC[command]}
    settings = {k: d for k, (_, d) in known.items()}
    settings.update(_COMMAND_DEFAULTS.get(command, {}))
    params = {}
    layers = []
    if flags.get("config"):
        layers.append(read_config(flags["config"]))
    cli_layer = {k: v for k, v in flags.items() if k in known and v is not None}
    cli_params = {}
    for item in flags.get("param") or []:
        if "=" not in item:
            raise UsageError(f"--param expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cli_params[k.strip()] = v.strip()
    layers.append({**cli_params, **cli_layer})
    for layer in layers:
        for key, value in layer.items():
            if key in known:
                typ = known[key][0]
                try:
                    settings[key] = typ(value) if value is not None else None
                except ValueError:
                    raise UsageError(f"bad value for {key}: {value!r}") from None
            elif key in _all_setting_keys():
                continue  # belongs to another command
            else:
                params[key] = parse_value(str(value))
    return settings, params


def _all_setting_keys():
    keys = set(_COMMON)
    for s in _SPECIFIC.values():
        keys |= set(s)
    return keys


def optimizer_config(s: dict) -> OptimizerConfig:
    if s["method"] not in METHODS:
        raise UsageError(f"unknown method {s['method']!r}")
    try:
        return OptimizerConfig(
            method=s["method"], eta=s["eta"], max_iters=s["max_iters"], grad_tol=s["grad_tol"],
            noise_sigma=s["noise_sigma"], curvature_method=s["curvature"],
            power_cfg=PowerIterConfig(seed=s["seed"]), seed=s["seed"],
            spectrum_stride=s["spectrum_stride"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# --------------------------------------------------------------------------
# output


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_ppm(path: Path, labels: np.ndarray) -> None:
    """Binary PPM, x to the right and y upwards; unresolved cells are grey."""
    palette = np.array([[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40],
                        [148, 103, 189], [140, 86, 75], [227, 119, 194], [188, 189, 34]], np.uint8)
    nx, ny = labels.shape
    img = np.full((ny, nx, 3), 128, np.uint8)
    lab = labels.T[::-1]
    ok = lab != UNRESOLVED
    img[ok] = palette[lab[ok] % len(palette)]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{nx} {ny}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def write_run_files(out: Path, command, settings, params, cfg, outputs, started) -> None:
    cfg_lines = [f"{k} = {v}" for k, v in sorted(settings.items()) if v is not None]
    for k, v in sorted(params.items()):
        if isinstance(v, list):
            v = ";".join(",".join(fmt(float(a)) for a in r) for r in v) if v and isinstance(v[0], list) \
                else ",".join(fmt(float(a)) for a in v)
        cfg_lines.append(f"{k} = {v}")
    (out / "run.cfg").write_text("\n".join(cfg_lines) + "\n")
    manifest = {
        "command": command,
        "problem": {"name": settings["problem"], "params": params},
        "settings": settings,
        "optimizer_config": cfg.to_dict() if cfg is not None else None,
        "version": __version__,
        "seed": settings["seed"],
        "wall_clock_seconds": time.perf_counter() - started,
        "outputs": sorted(outputs) + ["run.cfg"],
        "rerun": f"python -m cesp {command} --config {out / 'run.cfg'}",
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _outdir(settings) -> Path:
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands


def _coord_names(problem):
    if problem.k == 1 and problem.d == 1:
        return ["x"], ["y"]
    return [f"x{i}" for i in range(problem.k)], [f"y{i}" for i in range(problem.d)]


def cmd_trajectory(settings, params) -> int:
    started = time.perf_counter()
    problem = build_problem(settings["problem"], params, settings["seed"])
    cfg = optimizer_config(settings)
    if settings["start"] is not None:
        z0 = parse_point(settings["start"])
    elif settings["problem"] == "toy":
        z0 = np.array([-3.0, -1.0])
    elif settings["problem"] == "robust-mlp":
        z0 = robust_start(problem, settings["seed"])
    else:
        raise UsageError("--start is required for this problem")
    if z0.size != problem.n:
        raise UsageError(f"--start needs {problem.n} coordinates, got {z0.size}")
    rec = run_trajectory(problem, z0, cfg)
    out = _outdir(settings)
    xs, ys = _coord_names(problem)
    header = ["t", *xs, *ys, "f", "grad_norm_sq", "lambda_min_x", "lambda_max_y", "curv_norm"]
    rows = ([rec.t[i], *rec.z[i], rec.f[i], rec.grad_norm_sq[i], rec.lambda_x[i],
             rec.lambda_y[i], rec.curv_norm[i]] for i in range(len(rec)))
    write_csv(out / "trajectory.csv", header, rows)
    write_run_files(out, "trajectory", settings, params, cfg, ["trajectory.csv"], started)
    where = np.array2string(rec.final_z, precision=6) if problem.n <= 4 else \
        f"|z| = {np.linalg.norm(rec.final_z):.6g}"
    print(f"{rec.status} after {rec.iterations} iterations, final z: {where}")
    return {"converged": EXIT_OK, "max_iters": EXIT_MAX_ITERS, "diverged": EXIT_DIVERGED}[rec.status]


def cmd_classify(settings, params) -> int:
    started = time.perf_counter()
    problem = build_problem(settings["problem"], params)
    if settings["point"] is None:
        raise UsageError("--point is required")
    z = parse_point(settings["point"])
    if z.size != problem.n:
        raise UsageError(f"--point needs {problem.n} coordinates, got {z.size}")
    expect = settings["expect"]
    if expect is not None and expect not in VERDICTS:
        raise UsageError(f"--expect must be one of {', '.join(VERDICTS)}")
    report = classify_point(problem, z, settings["tol"])
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(text)
    if settings["out"] is not None:
        out = _outdir(settings)
        (out / "classify.json").write_text(text + "\n")
        write_run_files(out, "classify", settings, params, None, ["classify.json"], started)
    if expect is not None and report.verdict != expect:
        print(f"expected {expect}, got {report.verdict}", file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_scan(settings, params) -> int:
    started = time.perf_counter()
    problem = build_problem(settings["problem"], params)
    grid = _grid(settings)
    rep = stationarity_equivalence_scan(problem, grid, tol=settings["tol"], eta=settings["eta"],
                                        disp_tol=settings["disp_tol"])
    out = _outdir(settings)
    cf, gs = rep.cesp_fixed, rep.gda_stationary
    header = ["i", "j", "x", "y", "point_x", "point_y", "refined", "cesp_disp", "gda_disp",
              "cesp_fixed", "gda_stationary", "verdict"]
    rows = ([n // grid.ny, n % grid.ny, *rep.centers[n], *rep.points[n], rep.refined[n],
             rep.cesp_disp[n], rep.gda_disp[n], n in cf, n in gs, rep.verdicts[n]]
            for n in range(len(rep.centers)))
    write_csv(out / "scan.csv", header, rows)
    summary = rep.summary()
    with open(out / "scan_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_run_files(out, "scan", settings, params, None, ["scan.csv", "scan_summary.json"], started)
    print(f"cesp fixed cells: {len(cf)}, locally optimal cells: {len(rep.optimal)}, "
          f"gda stationary cells: {len(gs)}, equivalence holds: {rep.equivalence_holds}")
    return EXIT_OK if rep.equivalence_holds else EXIT_MISMATCH


def cmd_basin(settings, params) -> int:
    started = time.perf_counter()
    problem = build_problem(settings["problem"], params)
    cfg = optimizer_config(settings)
    grid = _grid(settings)
    if settings["attractors"]:
        attractors = [parse_point(a) for a in settings["attractors"].split(";")]
    elif settings["problem"] == "toy":
        attractors = [TOY_CRITICAL_POINTS[k] for k in ("z0", "z1", "z2")]
    else:
        raise UsageError("--attractors is required for this problem (e.g. 0,0;1,1)")
    try:
        raster = basin_raster(problem, cfg, grid, attractors, settings["match_radius"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _outdir(settings)
    centers = grid.centers()
    labels = raster.labels.ravel()
    write_csv(out / "basin.csv", ["x", "y", "label"],
              ([*centers[i], labels[i]] for i in range(len(centers))))
    write_ppm(out / "basin.ppm", raster.labels)
    write_run_files(out, "basin", settings, params, cfg, ["basin.csv", "basin.ppm"], started)
    counts = {str(a): raster.count(a) for a in range(len(attractors))}
    counts["unresolved"] = raster.count(UNRESOLVED)
    print(json.dumps(counts, sort_keys=True))
    return EXIT_OK


def cmd_robust(settings, params) -> int:
    started = time.perf_counter()
    if settings["problem"] != "robust-mlp":
        raise UsageError("robust runs only on --problem robust-mlp")
    if settings["seeds"] < 1:
        raise UsageError("--seeds must be >= 1")
    cfg = optimizer_config(settings)
    build_problem("robust-mlp", params)  # validate parameters before the sweep
    methods = ("gda", settings["method"]) if settings["method"] != "gda" else ("gda", "cesp")
    outcomes = []
    for seed in range(settings["seeds"]):
        outcomes += run_robust_seed(seed, params, cfg, methods, settings["init_scale"])
    out = _outdir(settings)
    write_csv(out / "robust.csv",
              ["seed", "method", "status", "iterations", "grad_norm_sq", "lambda_min_x"],
              ([o.seed, o.method, o.status, o.iterations, o.grad_norm_sq, o.lambda_min_x]
               for o in outcomes))
    summary = {}
    for m in methods:
        frac, n_conv = success_fraction(outcomes, m, settings["grad_tol"])
        summary[m] = {"converged": n_conv, "fraction_min_eig_ok": None if math.isnan(frac) else frac}
        print(f"{m}: {n_conv} runs reached grad_norm_sq < {settings['grad_tol']:g}; "
              f"fraction with lambda_min_x > -1e-3: {frac:.3f}")
    with open(out / "robust_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_run_files(out, "robust", settings, params, cfg,
                    ["robust.csv", "robust_summary.json"], started)
    return EXIT_OK


def _grid(settings) -> GridSpec:
    try:
        return GridSpec.parse(settings["grid"])
    except ValueError:
        raise UsageError(f"bad --grid {settings['grid']!r}; expected lo:hi:n or xlo:xhi:nx,ylo:yhi:ny") from None


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cesp", description="Saddle-point dynamics experiments.")
    parser.add_argument("--version", action="version", version=f"cesp {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--problem", help="toy, quad or robust-mlp")
        p.add_argument("--method", choices=METHODS)
        p.add_argument("--eta", type=float)
        p.add_argument("--max-iters", type=int)
        p.add_argument("--grad-tol", type=float)
        p.add_argument("--noise-sigma", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--curvature", choices=("dense", "power"))
        p.add_argument("--spectrum-stride", type=int)
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--config", metavar="FILE", help="flat key=value file")
        p.add_argument("--param", action="append", metavar="KEY=VALUE",
                       help="problem parameter, repeatable")

    p = sub.add_parser("trajectory", help="run one optimiser trajectory")
    common(p)
    p.add_argument("--start", metavar="X,Y")
    p = sub.add_parser("classify", help="classify a point for the GDA dynamics")
    common(p)
    p.add_argument("--point", metavar="X,Y")
    p.add_argument("--expect", metavar="VERDICT")
    p.add_argument("--tol", type=float)
    p = sub.add_parser("scan", help="grid scan of CESP fixed points against optimal saddles")
    common(p)
    p.add_argument("--grid", metavar="LO:HI:N")
    p.add_argument("--tol", type=float)
    p.add_argument("--disp-tol", type=float)
    p = sub.add_parser("basin", help="basin-of-attraction raster")
    common(p)
    p.add_argument("--grid", metavar="LO:HI:N")
    p.add_argument("--attractors", metavar="X,Y;X,Y")
    p.add_argument("--match-radius", type=float)
    p = sub.add_parser("robust", help="paired GDA/CESP runs on the robust MLP problem")
    common(p)
    p.add_argument("--seeds", type=int)
    p.add_argument("--init-scale", type=float)
    return parser


_VALUE_FLAGS = ("--grid", "--start", "--point", "--attractors")


def _glue_values(argv):
    """``--grid -4:4:161`` -> ``--grid=-4:4:161`` so argparse accepts leading minus signs."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] in _VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = _glue_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        (exc.parser or parser).print_usage(sys.stderr)
        print(f"cesp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    flags = vars(args)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        settings, params = resolve_settings(args.command, flags)
        if args.command == "trajectory":
            return cmd_trajectory(settings, params)
        if args.command == "classify":
            return cmd_classify(settings, params)
        if args.command == "scan":
            return cmd_scan(settings, params)
        if args.command == "basin":
            return cmd_basin(settings, params)
        return cmd_robust(settings, params)
    except UsageError as exc:
        sub.print_usage(sys.stderr)
        print(f"cesp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnknownProblem as exc:
        print(f"cesp: error: unknown problem {exc.args[0]!r} (choose toy, quad, robust-mlp)",
              file=sys.stderr)
        return EXIT_UNKNOWN_PROBLEM
    except ProblemError as exc:
        print(f"cesp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
