"""Experiment runner: replicated simulation sweeps, analytic tables, copy-count validation.

Configs are INI-style ``key = value`` files with ``[section]`` headers. Every
run writes its CSV outputs plus ``manifest.ini``, which is itself a valid
config that reproduces the same CSV bytes.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import itertools
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .analysis import CopyStratum, delivery_table, mc_copy_distribution, validate_stratum
from .engine import ConfigError, SimConfig, run
from .topology import MobilityConfig

log = logging.getLogger("rldp")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

SUMMARY_HEADER = ["point", "replications", "pdr_mean", "pdr_ci95", "forwards_per_native_mean",
                  "forwards_per_native_ci95", "status"]
CDF_HEADER = ["point", "delay_bound_seconds", "cumulative_pdr_mean", "ci_halfwidth"]
ANALYSIS_HEADER = ["phi", "omega", "rho", "n", "g", "D_R", "D_X"]
PMF_HEADER = ["omega", "a_hat", "H", "n", "samples", "phi", "d_TV"]

# chunk size for copy-count trials; fixed so output does not depend on --jobs
PMF_CHUNK = 5000


# -- value parsing ------------------------------------------------------------


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none") else float(s)


def _opt_str(s: str):
    return None if s.strip().lower() in ("", "none") else s.strip()


def _int_tuple(s: str):
    s = s.strip()
    if s.lower() in ("", "none"):
        return None
    return tuple(int(x) for x in s.split(","))


SIM_PARSERS = {
    "n": int, "density": _opt_str, "a_hat": _opt_float, "range": float, "rho": float,
    "policy": str.strip, "omega": float, "late_election": _bool, "g": int, "rate": float,
    "sources": int, "duration": float, "hop_latency": float, "jitter": float,
    "neighbor_mode": str.strip, "hello_interval": float, "payload_len": int, "phase": str.strip,
    "connected": _bool, "source_nodes": _int_tuple,
}
MOB_PARSERS = {"model": str.strip, "v_min": float, "v_max": float, "pause": float, "warm_up": float}


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(map(str, v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(int(v)) if isinstance(v, np.integer) else str(v)


def _list(s: str, conv) -> list:
    return [conv(x) for x in s.split(",") if x.strip()]


# -- experiment spec ----------------------------------------------------------


@dataclass
class ExperimentSpec:
    mode: str
    base: SimConfig = field(default_factory=lambda: SimConfig(record_log=False))
    sweep: dict[str, list] = field(default_factory=dict)
    replications: int = 20
    seed: int = 0
    cdf_points: int = 40
    analysis: dict = field(default_factory=dict)
    validate: dict = field(default_factory=dict)

    def points(self) -> list[dict]:
        names = list(self.sweep)
        return [dict(zip(names, combo)) for combo in itertools.product(*self.sweep.values())]

    def point_config(self, point: dict) -> SimConfig:
        mob = {k.split(".", 1)[1]: v for k, v in point.items() if k.startswith("mobility.")}
        sim = {k: v for k, v in point.items() if not k.startswith("mobility.")}
        cfg = replace(self.base, **sim)
        if mob:
            cfg = replace(cfg, mobility=replace(cfg.mobility, **mob))
        return cfg


def _parser_for(name: str):
    if name.startswith("mobility."):
        return MOB_PARSERS.get(name.split(".", 1)[1])
    return SIM_PARSERS.get(name)


def load_spec(text: str, mode: str) -> ExperimentSpec:
    """Parse a config text into a validated ExperimentSpec; raises ConfigError."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None

    def section(name, parsers):
        out = {}
        if cp.has_section(name):
            for k, v in cp.items(name):
                if k not in parsers:
                    raise ConfigError(f"unknown key {k!r} in [{name}]")
                try:
                    out[k] = parsers[k](v)
                except ValueError as e:
                    raise ConfigError(f"[{name}] {k}: {e}") from None
        return out

    known = {"experiment", "simulation", "mobility", "sweep", "analysis", "validate", "points"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")

    exp = section("experiment", {"replications": int, "seed": int, "cdf_points": int, "mode": str.strip,
                                 "version": str.strip})
    sim = section("simulation", SIM_PARSERS)
    try:
        mob = MobilityConfig(**section("mobility", MOB_PARSERS))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    spec = ExperimentSpec(mode, SimConfig(**sim, mobility=mob, record_log=False))
    spec.replications = exp.get("replications", spec.replications)
    spec.seed = exp.get("seed", spec.seed)
    spec.cdf_points = exp.get("cdf_points", spec.cdf_points)
    if spec.replications < 1:
        raise ConfigError("replications must be >= 1")
    if spec.cdf_points < 2:
        raise ConfigError("cdf_points must be >= 2")

    if cp.has_section("sweep"):
        for k, v in cp.items("sweep"):
            conv = _parser_for(k)
            if conv is None:
                raise ConfigError(f"sweep axis {k!r} is not a config field")
            try:
                spec.sweep[k] = _list(v, conv)
            except ValueError as e:
                raise ConfigError(f"[sweep] {k}: {e}") from None
            if not spec.sweep[k]:
                raise ConfigError(f"sweep axis {k!r} is empty")

    spec.analysis = section("analysis", {"phi": lambda s: _list(s, float), "omega": lambda s: _list(s, float),
                                         "rho": lambda s: _list(s, float), "n": lambda s: _list(s, int),
                                         "g": int})
    spec.validate = section("validate", {"a_hat": float, "omega": float, "rho": float, "trials": int,
                                         "n_nodes": int, "hops": lambda s: _list(s, int),
                                         "degree": lambda s: _list(s, int)})
    _check_mode(spec)
    return spec


def _check_mode(spec: ExperimentSpec) -> None:
    if spec.mode == "simulate":
        for p in spec.points():
            try:
                spec.point_config(p).validate()
            except ValueError as e:
                where = f"sweep point {p}: " if p else ""
                raise ConfigError(f"{where}{e}") from None
    elif spec.mode == "analyze":
        a = spec.analysis
        a.setdefault("phi", [0.1, 0.3])
        a.setdefault("omega", [1.0])
        a.setdefault("rho", [0.0, 0.2])
        a.setdefault("n", list(range(1, 15)))
        a.setdefault("g", 30)
        if a["g"] < 1 or any(x < 0 for x in a["n"]):
            raise ConfigError("analysis needs g >= 1 and n >= 0")
        for name in ("phi", "omega", "rho"):
            if not all(0.0 <= x <= 1.0 for x in a[name]):
                raise ConfigError(f"analysis {name} values must lie in [0, 1]")
    elif spec.mode == "validate-pmf":
        v = spec.validate
        v.setdefault("a_hat", 4.0)
        v.setdefault("omega", 0.9)
        v.setdefault("rho", 0.0)
        v.setdefault("trials", 100_000)
        v.setdefault("n_nodes", 100)
        v.setdefault("hops", [2, 3, 5])
        v.setdefault("degree", [6])
        if v["trials"] < 1 or v["n_nodes"] < 2 or v["a_hat"] <= 0:
            raise ConfigError("validate needs trials >= 1, n_nodes >= 2, a_hat > 0")
        if not (0.0 <= v["omega"] <= 1.0 and 0.0 <= v["rho"] <= 1.0):
            raise ConfigError("validate omega and rho must lie in [0, 1]")
    else:
        raise ConfigError(f"unknown mode {spec.mode!r}")


# -- manifest -----------------------------------------------------------------


def manifest_text(spec: ExperimentSpec) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["experiment"] = {"mode": spec.mode, "version": __version__, "replications": str(spec.replications),
                        "seed": str(spec.seed), "cdf_points": str(spec.cdf_points)}
    if spec.mode == "simulate":
        cp["simulation"] = {k: _fmt(getattr(spec.base, k)) for k in SIM_PARSERS}
        cp["mobility"] = {f.name: _fmt(getattr(spec.base.mobility, f.name)) for f in fields(MobilityConfig)}
        if spec.sweep:
            cp["sweep"] = {k: ",".join(map(_fmt, v)) for k, v in spec.sweep.items()}
        seeds = f"{spec.seed}..{spec.seed + spec.replications - 1}"
        cp["points"] = {
            str(i): " ".join(f"{k}={_fmt(v)}" for k, v in p.items()) + f" seeds={seeds}"
            for i, p in enumerate(spec.points())
        }
    elif spec.mode == "analyze":
        cp["analysis"] = {k: ",".join(map(_fmt, v)) if isinstance(v, list) else _fmt(v)
                          for k, v in spec.analysis.items()}
    else:
        cp["validate"] = {k: ",".join(map(_fmt, v)) if isinstance(v, list) else _fmt(v)
                          for k, v in spec.validate.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# -- output -------------------------------------------------------------------


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def mean_ci(values) -> tuple[float, float]:
    """Mean and Student-t 95% half-width; zero width for a single value."""
    x = np.asarray(values, dtype=float)
    m = float(x.mean())
    if len(x) < 2:
        return m, 0.0
    half = stats.t.ppf(0.975, len(x) - 1) * x.std(ddof=1) / math.sqrt(len(x))
    return m, float(half)


@dataclass
class Replication:
    pdr: float
    forwards_per_native: float
    expected_pairs: int
    delays: np.ndarray


def emit_cdf(reps: list[Replication], points: int = 40, point_id: int = 0) -> list[list]:
    """Cumulative-PDR rows on a log-spaced delay grid; the last bound is the largest delay.

    Returns no rows when nothing was delivered.
    """
    all_d = np.concatenate([r.delays for r in reps]) if reps else np.empty(0)
    pos = all_d[all_d > 0]
    if len(pos) == 0:
        return []
    lo, hi = float(pos.min()), float(pos.max())
    grid = np.geomspace(lo, hi, points) if hi > lo else np.array([hi])
    grid[-1] = hi
    rows = []
    for b in grid:
        vals = [
            int(np.searchsorted(r.delays, b, side="right")) / r.expected_pairs if r.expected_pairs else 0.0
            for r in reps
        ]
        m, h = mean_ci(vals)
        rows.append([point_id, float(b), m, h])
    return rows


def _replicate(cfg: SimConfig) -> Replication:
    m = run(cfg).metrics
    return Replication(m.pdr, m.forwards_per_native, m.expected_pairs, m.delays())


def _map(func, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [_capture(func, x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_capture, [func] * len(items), items))


def _capture(func, x):
    try:
        return func(x)
    except Exception as e:  # recorded per sweep point, not fatal to the sweep
        return e


def run_simulate(spec: ExperimentSpec, out: Path, jobs: int = 1) -> int:
    points = spec.points()
    cfgs = [replace(spec.point_config(p), seed=spec.seed + r) for p in points for r in range(spec.replications)]
    results = _map(_replicate, cfgs, jobs)
    axes = list(spec.sweep)
    summary, cdf_rows = [], []
    failed = 0
    for i, p in enumerate(points):
        reps = results[i * spec.replications : (i + 1) * spec.replications]
        errs = [e for e in reps if isinstance(e, Exception)]
        vals = [p[a] for a in axes]
        if errs:
            failed += 1
            log.error("sweep point %d failed: %s", i, errs[0])
            status = f"failed: {type(errs[0]).__name__}: {errs[0]}"
            summary.append([i, *vals, spec.replications, "nan", "nan", "nan", "nan", status])
            continue
        pdr = mean_ci([r.pdr for r in reps])
        fpn = mean_ci([r.forwards_per_native for r in reps])
        summary.append([i, *vals, spec.replications, *pdr, *fpn, "ok"])
        cdf_rows += emit_cdf(reps, spec.cdf_points, i)
    header = SUMMARY_HEADER[:1] + axes + SUMMARY_HEADER[1:]
    atomic_write(out / "summary.csv", csv_text(header, summary))
    atomic_write(out / "cdf.csv", csv_text(CDF_HEADER, cdf_rows))
    atomic_write(out / "manifest.ini", manifest_text(spec))
    return EXIT_RUNTIME if failed else EXIT_OK


def run_analyze(spec: ExperimentSpec, out: Path) -> int:
    a = spec.analysis
    rows = delivery_table(a["phi"], a["omega"], a["rho"], a["n"], a["g"])
    atomic_write(out / "analysis.csv", csv_text(ANALYSIS_HEADER, [[r[k] for k in ANALYSIS_HEADER] for r in rows]))
    atomic_write(out / "manifest.ini", manifest_text(spec))
    return EXIT_OK


def _pmf_chunk(args) -> dict:
    v, trials, seed = args
    return mc_copy_distribution(v["a_hat"], v["omega"], v["rho"], trials, np.random.default_rng(seed),
                                n_nodes=v["n_nodes"])


def run_validate(spec: ExperimentSpec, out: Path, jobs: int = 1) -> int:
    v = spec.validate
    n_chunks = -(-v["trials"] // PMF_CHUNK)
    seeds = np.random.SeedSequence(spec.seed).spawn(n_chunks)
    sizes = [min(PMF_CHUNK, v["trials"] - c * PMF_CHUNK) for c in range(n_chunks)]
    parts = _map(_pmf_chunk, [(v, s, q) for s, q in zip(sizes, seeds)], jobs)
    for p in parts:
        if isinstance(p, Exception):
            raise p
    merged: dict[tuple[int, int], CopyStratum] = {}
    for part in parts:
        for key, st in part.items():
            if key in merged:
                merged[key].counts += st.counts
            else:
                merged[key] = st
    rows = []
    for h in v["hops"]:
        for deg in v["degree"]:
            st = merged.get((h, deg))
            if st is None or st.samples == 0:
                rows.append([v["omega"], v["a_hat"], h, deg, 0, "nan", "nan"])
                continue
            s = validate_stratum(st, v["rho"])
            rows.append([v["omega"], v["a_hat"], h, deg, s.samples, s.phi, s.d_tv])
    atomic_write(out / "copy_fit.csv", csv_text(PMF_HEADER, rows))
    atomic_write(out / "manifest.ini", manifest_text(spec))
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rldp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="mode", required=True)
    for name, text in (("simulate", "replicated simulation sweep"),
                       ("analyze", "analytic delivery-rate table"),
                       ("validate-pmf", "copy-count pmf fit and total variation")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="config file (defaults used when omitted)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, help="base seed, overrides [experiment] seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        spec = load_spec(text, args.mode)
        if args.seed is not None:
            spec.seed = args.seed
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if spec.mode == "simulate":
            code = run_simulate(spec, args.out, args.jobs)
        elif spec.mode == "analyze":
            code = run_analyze(spec, args.out)
        else:
            code = run_validate(spec, args.out, args.jobs)
    except Exception as e:
        log.exception("run failed")
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    log.info("wrote outputs to %s", args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
