"""Scenario runner: ``boltzlab run | verify | sweep | bench``.

Config files are TOML.  Top-level tables ``[grid]``, ``[kernel]``,
``[rule]``, ``[solver]`` and ``[initial]`` set defaults; each
``[[scenario]]`` entry may override any of them under the same key.

Exit status: 0 when every asserted certificate holds, 1 when one fails
(the invariant is named on stderr), 2 for config errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import platform
import re
import sys
import time
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .collision import (
    BobylevConfig,
    CollisionKernel,
    SphereRule,
    fit_bobylev_constant,
    gain_bobylev,
    gain_direct,
    riesz_constant,
)
from .estimates import (
    TestFamily,
    check_bilinear_noregularity,
    check_convolution,
    check_fractional_leibniz,
    check_scaling_family,
    check_strichartz,
)
from .grid import DistributionField, PhaseGrid, fourier_v
from .littlewood_paley import frequency_support_check
from .solvers import SolverConfig, critical_norm, kaniel_shinbrot, picard_gain_only

KINDS = ("gain_only", "kaniel_shinbrot", "verify_estimate", "frequency_check", "sweep")

SCHEMA = {
    "grid": {"L_x": float, "N_x": int, "L_v": float, "N_v": int, "homogeneous": bool},
    "kernel": {"gamma": float, "b": str, "C_cut": float},
    "rule": {"n_theta": int, "n_phi": int},
    "solver": {
        "T": float, "dt": float, "max_iters": int, "iter_tol": float, "eta": float,
        "quadrature": str, "gain_method": str, "singularity": str, "eps_nn": float,
    },
    "initial": {"amplitude": float, "width": float, "modulation": float, "center": list},
}
SCENARIO_KEYS = {
    "kind": str, "name": str, "seed": int, "estimate": str, "samples": int, "refine": bool,
    "family": str, "amplitudes": list, "M": int, "M1": int, "M2": int, "T0": float,
    "lambdas": list, "s": float, "fit_bobylev": bool,
}
DEFAULTS = {
    "grid": {"L_x": 0.5, "N_x": 4, "L_v": 4.0, "N_v": 8, "homogeneous": False},
    "kernel": {"gamma": -0.5, "b": "abs_cos", "C_cut": 1.0},
    "rule": {"n_theta": 16, "n_phi": 32},
    "solver": {},
    "initial": {"amplitude": 1e-3, "width": 1.0, "modulation": 0.5, "center": [0.0, 0.0, 0.0]},
}


class ConfigError(ValueError):
    """Schema violation; carries the config line it refers to."""

    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


class CertificateFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config


def _line_of(text: str, key: str, occurrence: int = 0) -> int | None:
    pat = re.compile(rf"^[ \t]*(\[\[?[ \t]*{re.escape(key)}[ \t]*\]\]?|{re.escape(key)}[ \t]*=)", re.M)
    hits = [text.count("\n", 0, m.start()) + 1 for m in pat.finditer(text)]
    if not hits:
        return None
    return hits[min(occurrence, len(hits) - 1)]


def _check_table(name: str, table, schema: dict, text: str, occurrence: int = 0) -> None:
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table", _line_of(text, name, occurrence))
    for key, val in table.items():
        if key in SCHEMA and name == "scenario":
            _check_table(key, val, SCHEMA[key], text)
            continue
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in [{name}]", _line_of(text, key, occurrence))
        want = schema[key]
        ok = isinstance(val, want) or (want is float and isinstance(val, int) and not isinstance(val, bool))
        if want is int and isinstance(val, bool):
            ok = False
        if not ok:
            raise ConfigError(f"{name}.{key} must be {want.__name__}, got {type(val).__name__}", _line_of(text, key, occurrence))


def parse_config(text: str) -> dict:
    """Parse and validate config text; raises :class:`ConfigError` with line anchors."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(str(exc), int(m.group(1)) if m else None) from exc
    known = set(SCHEMA) | {"scenario", "seed", "sweep"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown top-level key {key!r}", _line_of(text, key))
    for key in SCHEMA:
        if key in raw:
            _check_table(key, raw[key], SCHEMA[key], text)
    if "seed" in raw and not isinstance(raw["seed"], int):
        raise ConfigError("seed must be an integer", _line_of(text, "seed"))
    scenarios = raw.get("scenario", [])
    if not isinstance(scenarios, list):
        raise ConfigError("scenario must be an array of tables ([[scenario]])", _line_of(text, "scenario"))
    for i, sc in enumerate(scenarios):
        _check_table("scenario", sc, {**SCENARIO_KEYS}, text, i)
        if sc.get("kind") not in KINDS:
            raise ConfigError(f"scenario kind must be one of {KINDS}", _line_of(text, "kind", i) or _line_of(text, "scenario", i))
    cfg = {"seed": int(raw.get("seed", 0)), "scenario": scenarios}
    for key in SCHEMA:
        cfg[key] = {**DEFAULTS[key], **raw.get(key, {})}
    # build every object once so errors surface before compute
    for i, sc in enumerate(scenarios):
        try:
            _objects(_merged(cfg, sc))
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), _line_of(text, "scenario", i)) from exc
    return cfg


def _merged(cfg: dict, sc: dict) -> dict:
    out = {k: dict(cfg[k]) for k in SCHEMA}
    for k in SCHEMA:
        out[k].update(sc.get(k, {}))
    out["scenario"] = {k: v for k, v in sc.items() if k not in SCHEMA}
    out["seed"] = int(sc.get("seed", cfg["seed"]))
    return out


def _objects(m: dict):
    g = m["grid"]
    grid = PhaseGrid(float(g["L_x"]), int(g["N_x"]), float(g["L_v"]), int(g["N_v"]))
    k = CollisionKernel.from_config(m["kernel"])
    rule = SphereRule.from_config(m["rule"])
    solver = SolverConfig(**m["solver"])
    return grid, k, rule, solver


def initial_datum(grid: PhaseGrid, init: dict, homogeneous: bool = False, amplitude: float | None = None) -> DistributionField:
    """``a exp(-|v - c|^2 / 2 w^2) (1 + m cos(pi x_1 / L_x))``."""
    amp = float(init["amplitude"] if amplitude is None else amplitude)
    w = float(init["width"])
    c = np.asarray(init.get("center", [0.0, 0.0, 0.0]), float)
    V = grid.v_mesh()
    prof = amp * np.exp(-((V - c) ** 2).sum(-1) / (2 * w * w))
    if homogeneous:
        return DistributionField(grid, prof[None, None, None])
    mod = 1 + float(init["modulation"]) * np.cos(np.pi * grid.x1 / grid.L_x)
    return DistributionField(grid, mod[:, None, None, None, None, None] * prof[None, None, None])


# ---------------------------------------------------------------------------
# scenarios


def _fmt(x) -> str:
    return repr(float(x))


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _series_csv(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def amplitude_sweep(m: dict, amplitudes) -> list[dict]:
    """Gain-only convergence verdict per amplitude on a fixed datum shape."""
    amps = [float(a) for a in amplitudes]
    if any(a < 0 for a in amps) or any(b <= a for a, b in zip(amps, amps[1:])):
        raise ValueError("amplitudes must be non-negative and strictly ascending")
    grid, k, rule, solver = _objects(m)
    rows = []
    import warnings

    from .solvers import SmallnessWarning

    for a in amps:
        f0 = initial_datum(grid, m["initial"], m["grid"]["homogeneous"], amplitude=a)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SmallnessWarning)
            rep = picard_gain_only(f0, k, rule, solver)
        rows.append({
            "amplitude": a,
            "converged": bool(rep.converged),
            "iterations": rep.iterations,
            "contraction": float(rep.contraction[-1]) if rep.contraction else 0.0,
            "critical_norm": float(critical_norm(f0, k)),
        })
    verdicts = [r["converged"] for r in rows]
    first_fail = verdicts.index(False) if False in verdicts else len(verdicts)
    monotone = all(not v for v in verdicts[first_fail:])
    for r in rows:
        r["monotone_boundary"] = monotone
    return rows


def sweep_csv(rows: list[dict]) -> str:
    keys = ["amplitude", "converged", "iterations", "contraction", "critical_norm"]
    return _series_csv(keys, [[r[k] for k in keys] for r in rows])


def _bobylev_constant(m: dict, grid: PhaseGrid, k, rule, cache: dict) -> dict:
    key = (grid.L_v, grid.N_v, k.gamma, k.name, rule.n_theta, rule.n_phi)
    if key not in cache:
        sing = "epstein" if k.gamma < 0 else "zero"
        cache[key] = {
            "value": fit_bobylev_constant(grid, k, rule, singularity=sing),
            "analytic": riesz_constant(k.gamma),
            "grid": grid.header(),
            "rule": [rule.n_theta, rule.n_phi],
        }
    return cache[key]


def run_scenario(m: dict, out: Path, tag: str, cache: dict) -> tuple[dict, list[str]]:
    """Execute one merged scenario; returns its manifest entry and failed invariants."""
    sc = m["scenario"]
    kind = sc["kind"]
    grid, k, rule, solver = _objects(m)
    homog = bool(m["grid"]["homogeneous"])
    entry = {"kind": kind, "name": tag, "seed": m["seed"], "config": {key: m[key] for key in SCHEMA}}
    failed: list[str] = []

    if kind == "gain_only":
        f0 = initial_datum(grid, m["initial"], homog)
        rep = picard_gain_only(f0, k, rule, solver)
        entry["result"] = rep.manifest()
        tr = rep.trajectory
        _write(out / f"{tag}.csv", _series_csv(["t", "mass", "max"], [
            [float(t), float(grid.h_v**3 * (2 * grid.L_x) ** 3 * v.mean(axis=(0, 1, 2)).sum()), float(v.max())]
            for t, v in zip(tr.times, tr.values)
        ]))
        if not rep.converged:
            failed.append(f"{tag}: gain-only iteration did not converge")

    elif kind == "kaniel_shinbrot":
        from .diagnostics import monitor

        f0 = initial_datum(grid, m["initial"], homog)
        traj, state = kaniel_shinbrot(f0, k, rule, solver)
        entry["result"] = state.manifest()
        rep = monitor(traj, k, rule, cfg=solver)
        entry["monitor"] = rep.summary()
        _write(out / f"{tag}.csv", rep.to_csv())
        _write(out / f"{tag}.report.json", rep.to_json())
        if state.monotonicity_certificate > solver.eps_nn:
            failed.append(f"{tag}: monotone sandwich certificate {state.monotonicity_certificate:.3e}")
        if not state.converged:
            failed.append(f"{tag}: sandwich gap did not reach tolerance")
        if not rep.verdicts["l1_bound"]:
            failed.append(f"{tag}: L1 bound violated")

    elif kind == "verify_estimate":
        est = sc.get("estimate", "convolution-2.13")
        n = int(sc.get("samples", 10))
        refine = bool(sc.get("refine", False))
        fam = TestFamily(sc.get("family", "gaussian-mixtures"), seed=m["seed"])
        if est.startswith("convolution"):
            if sc.get("fit_bobylev", True):
                entry["bobylev_constant"] = _bobylev_constant(m, grid, k, rule, cache)
            rep = check_convolution(k, est, fam, n, grid, rule, refine=refine)
        elif est.startswith("strichartz"):
            qp = tuple(float(x) for x in re.findall(r"[\d.]+|inf", est.split("-", 1)[1]))
            rep = check_strichartz(qp, m["seed"], n, refine=refine)
        elif est.startswith("bilinear"):
            rep = check_bilinear_noregularity(k, fam, float(sc.get("T0", 2.0)), n, rule=rule)
        elif est.startswith("scaling"):
            rep = check_scaling_family(k, tuple(sc.get("lambdas", (0.5, 1.0, 2.0, 4.0))), m["seed"], s=float(sc.get("s", 0.5)))
        elif est.startswith("leibniz"):
            rep = check_fractional_leibniz(float(sc.get("s", 1.25)), seed=m["seed"], n_samples=n, refine=refine)
        else:
            raise ConfigError(f"unknown estimate {est!r}")
        entry["result"] = {"stats": rep.stats(), "refinement": rep.refinement, "passed": rep.passed}
        _write(out / f"{tag}.csv", rep.to_csv())
        _write(out / f"{tag}.report.json", rep.to_json())
        if rep.passed is False:
            failed.append(f"{tag}: estimate {est} stability check failed")

    elif kind == "frequency_check":
        M, M1, M2 = int(sc.get("M", 16)), int(sc.get("M1", 1)), int(sc.get("M2", 1))
        fam = TestFamily(sc.get("family", "gaussian-mixtures"), seed=m["seed"])
        rng = fam.rng()
        ratios = []
        for _ in range(int(sc.get("samples", 10))):
            ratios.append(frequency_support_check(fam.field(grid, rng), fam.field(grid, rng), M, M1, M2, k, rule))
        entry["result"] = {"max_ratio": max(ratios)}
        _write(out / f"{tag}.csv", _series_csv(["sample", "ratio"], [[i, r] for i, r in enumerate(ratios)]))
        if max(ratios) > 1e-6:
            failed.append(f"{tag}: frequency-support ratio {max(ratios):.3e} above 1e-6")

    elif kind == "sweep":
        rows = amplitude_sweep(m, sc.get("amplitudes", [1e-3, 1e-2, 1e-1, 1.0]))
        entry["result"] = {"table": rows}
        _write(out / f"{tag}.csv", sweep_csv(rows))
    return entry, failed


def _versions() -> dict:
    import numba
    import scipy

    return {
        "boltzlab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def run(cfg: dict, out: Path, source: str | None = None) -> int:
    out.mkdir(parents=True, exist_ok=True)
    cache: dict = {}
    manifest = {
        "config": {k: cfg[k] for k in SCHEMA},
        "seed": cfg["seed"],
        "source": source,
        "versions": _versions(),
        "scenarios": [],
    }
    failures: list[str] = []
    for i, sc in enumerate(cfg["scenario"]):
        m = _merged(cfg, sc)
        tag = sc.get("name", f"{i:02d}-{sc['kind']}")
        entry, failed = run_scenario(m, out, tag, cache)
        manifest["scenarios"].append(entry)
        failures += failed
    manifest["bobylev_constants"] = list(cache.values())
    manifest["failures"] = failures
    _write(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2, default=_json_default) + "\n")
    for msg in failures:
        print(f"certificate failed: {msg}", file=sys.stderr)
    return 1 if failures else 0


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o).__name__)


def bench(grid: PhaseGrid, k: CollisionKernel, rule: SphereRule, seed: int, repeats: int = 1) -> list[dict]:
    """Wall-clock table of direct and spectral gain evaluations on one homogeneous pair."""
    fam = TestFamily(seed=seed)
    rng = fam.rng()
    f, g = fam.field(grid, rng), fam.field(grid, rng)
    ft, gt = fourier_v(f), fourier_v(g)
    routes = {
        "direct-trilinear": lambda: gain_direct(f, g, k, rule, method="trilinear"),
        "direct-conservative": lambda: gain_direct(f, g, k, rule, method="conservative"),
        "spectral": lambda: gain_bobylev(ft, gt, k, rule, BobylevConfig()),
    }
    rows = []
    for name, fn in routes.items():
        fn()  # compile and warm caches
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        rows.append({"route": name, "N_v": grid.N_v, "seconds": (time.perf_counter() - t0) / repeats})
    return rows


# ---------------------------------------------------------------------------
# entry point


def _load(path: str | None) -> tuple[dict, str | None]:
    if path is None:
        return parse_config(""), None
    text = Path(path).read_text(encoding="utf-8")
    return parse_config(text), str(path)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="boltzlab", description="Kinetic collision and transport experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("run", "run every scenario in a config"),
        ("verify", "check one inequality on a seeded family"),
        ("sweep", "amplitude sweep of the gain-only iteration"),
        ("bench", "direct versus spectral gain timing"),
    ]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TOML config file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", default="boltzlab-out", help="output directory")
        sp.add_argument("--refine", action="store_true", help="add a refinement pass where supported")
        sp.add_argument("--samples", type=int, help="samples per estimate")
        if name == "verify":
            sp.add_argument("--estimate", default="convolution-2.13")
        if name == "sweep":
            sp.add_argument("--amplitudes", type=float, nargs="+")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, source = _load(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
            for sc in cfg["scenario"]:
                sc.pop("seed", None)
        out = Path(args.out)
        if args.command == "run":
            if args.samples is not None or args.refine:
                for sc in cfg["scenario"]:
                    if args.samples is not None:
                        sc["samples"] = args.samples
                    if args.refine:
                        sc["refine"] = True
            return run(cfg, out, source)
        if args.command == "verify":
            sc = {"kind": "verify_estimate", "estimate": args.estimate, "name": "verify", "refine": args.refine}
            if args.samples is not None:
                sc["samples"] = args.samples
            cfg["scenario"] = [sc]
            _objects(_merged(cfg, sc))
            return run(cfg, out, source)
        if args.command == "sweep":
            sc = {"kind": "sweep", "name": "sweep"}
            if args.amplitudes:
                sc["amplitudes"] = args.amplitudes
            cfg["scenario"] = [sc]
            return run(cfg, out, source)
        if args.command == "bench":
            grid, k, rule, _ = _objects(_merged(cfg, {}))
            rows = bench(grid, k, rule, cfg["seed"])
            out.mkdir(parents=True, exist_ok=True)
            text = _series_csv(["route", "N_v", "seconds"], [[r["route"], r["N_v"], r["seconds"]] for r in rows])
            _write(out / "bench.csv", text)
            print(text, end="")
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
