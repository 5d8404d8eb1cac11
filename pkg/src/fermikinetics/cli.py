"""Declarative scenario runner.

Configuration files are line oriented::

    # comment
    run.scenario = evolve
    model.dim = 2
    model.n = 16
    params.eta = 0.3

Every key belongs to a section; unknown keys are errors. All problems in a
file are collected and reported together with their line numbers.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import collision as col
from . import fluctuations as fl
from . import fockoracle as fo
from . import io
from . import kinetics as kin
from . import lattice as lat
from . import quasifree as qf
from .errors import ConfigError, FermiKineticsError

__all__ = ["RunSpec", "parse_config", "run_scenario", "main", "SCHEMA"]

log = logging.getLogger("fermikinetics")

SCENARIOS = ("evolve", "fluct", "scaling", "oracle", "equilibrium")


def _int(s):
    return int(s)


def _float(s):
    x = float(s)
    if not np.isfinite(x):
        raise ValueError("must be finite")
    return x


def _auto_float(s):
    return None if s.strip().lower() == "auto" else _float(s)


def _floats(s):
    return tuple(_float(x) for x in s.replace(",", " ").split())


def _ints(s):
    return tuple(int(x) for x in s.replace(",", " ").split())


def _bool(s):
    t = s.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected true or false")


def _choice(*options):
    def parse(s):
        t = s.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return parse


def _text(s):
    return s.strip()


# (parser, default); the default None means "not set"
SCHEMA = {
    "run": {
        "scenario": (_choice(*SCENARIOS), None),
        "T": (_float, 50.0),
        "dt": (_float, 0.01),
        "monitor_every": (_int, 100),
        "seed": (_int, 0),
        "snapshots": (_bool, True),
    },
    "model": {
        "dim": (_int, 2),
        "n": (_int, 16),
        "band": (_choice("cosine"), "cosine"),
        "band_coeffs": (_floats, (1.0,)),
        "potential": (_choice("cosine", "constant"), "cosine"),
        "potential_coeffs": (_floats, (1.0,)),
        "potential_constant": (_float, 1.0),
    },
    "params": {
        "lambda": (_float, 1.0),
        "N": (_float, 1.0),
        "N_list": (_floats, (8.0, 16.0, 32.0, 64.0, 128.0)),
        "K_list": (_ints, (8, 16, 32, 64, 128)),
        "eta": (_auto_float, 0.3),
        "mode": (_choice(col.MOLLIFIED, col.EXACT_SHELL), col.MOLLIFIED),
        "threshold": (_auto_float, None),
        "max_entries": (_int, col.DEFAULT_MAX_ENTRIES),
        "theta_r": (_auto_float, None),
        "theta_d": (_auto_float, None),
        "moment": (_choice("variance", "mean", "both"), "both"),
    },
    "state": {
        "kind": (_choice("random", "fermi-dirac", "constant", "fermi-sea", "density-wave"),
                 "random"),
        "low": (_float, 0.05),
        "high": (_float, 0.95),
        "beta": (_float, 1.0),
        "mu": (_float, 0.0),
        "value": (_float, 0.5),
        "q": (_int, 1),
        "amplitude": (_float, 1e-3),
        "rho": (_auto_float, None),
        "e": (_auto_float, None),
    },
    "observable": {
        "site": (_int, 0),
    },
    "fluct": {
        "K_list": (_ints, (1, 2, 4, 8, 16, 32, 64)),
    },
    "oracle": {
        "L": (_int, 8),
        "t": (_float, 1.0),
        "cases": (_int, 20),
        "max_order": (_int, 3),
    },
    "output": {
        "dir": (_text, "out"),
        "formats": (_text, "csv,json"),
        "table": (_choice("none", "binary", "csv", "both"), "none"),
    },
}


@dataclass
class RunSpec:
    scenario: str
    values: dict
    defaults: list = field(default_factory=list)
    source: str = ""

    def get(self, section, key):
        return self.values[section][key]

    def flat(self) -> dict:
        return {f"{s}.{k}": v for s, d in self.values.items() for k, v in d.items()}

    def digest(self) -> str:
        text = json.dumps(io._jsonable(self.flat()), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


def parse_config(text: str) -> RunSpec:
    """Parse and validate configuration text.

    :raises ConfigError: listing every problem as ``(line, message)`` in
        ``errors``.
    """
    errors = []
    values = {s: {} for s in SCHEMA}
    where = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append((lineno, f"expected 'section.key = value', got {raw.strip()!r}"))
            continue
        key, _, val = (part.strip() for part in line.partition("="))
        section, dot, name = key.partition(".")
        if not dot or section not in SCHEMA or name not in SCHEMA[section]:
            errors.append((lineno, f"unknown key {key!r}"))
            continue
        if name in values[section]:
            errors.append((lineno, f"duplicate key {key!r}"))
            continue
        parser, _ = SCHEMA[section][name]
        where[key] = lineno
        try:
            values[section][name] = parser(val)
        except (ValueError, TypeError) as exc:
            errors.append((lineno, f"{key}: invalid value {val!r} ({exc})"))

    defaults = []
    for section, keys in SCHEMA.items():
        for name, (_, default) in keys.items():
            if name not in values[section]:
                values[section][name] = default
                if default is not None:
                    defaults.append(f"{section}.{name}")

    scenario = values["run"]["scenario"]
    if scenario is None:
        errors.append((None, "scenario missing (set run.scenario)"))
    # constraint messages lead with the key they concern
    errors.extend((where.get(msg.split()[0]), msg) for msg in _constraints(values))
    if errors:
        errors.sort(key=lambda e: (e[0] is None, e[0] or 0))
        lines = [f"line {ln}: {msg}" if ln else msg for ln, msg in errors]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines), errors)
    return RunSpec(scenario, values, defaults, text)


def _constraints(v) -> list:
    out = []
    m, p, r, s, o = v["model"], v["params"], v["run"], v["state"], v["oracle"]
    if m["dim"] not in (1, 2):
        out.append(f"model.dim must be 1 or 2, got {m['dim']}")
    if m["n"] % 2:
        out.append(f"model.n must be even, got {m['n']}")
    if not 4 <= m["n"] <= 1024:
        out.append(f"model.n must lie in [4, 1024], got {m['n']}")
    if r["T"] <= 0:
        out.append("run.T must be positive")
    if r["dt"] <= 0:
        out.append("run.dt must be positive")
    if r["monitor_every"] < 1:
        out.append("run.monitor_every must be at least 1")
    if p["N"] <= 0 or any(x <= 0 for x in p["N_list"]):
        out.append("params.N and params.N_list must be positive")
    if any(k < 1 for k in p["K_list"]) or any(k < 1 for k in v["fluct"]["K_list"]):
        out.append("params.K_list and fluct.K_list must hold positive integers")
    if p["eta"] is not None and p["eta"] <= 0:
        out.append("params.eta must be positive or 'auto'")
    if p["threshold"] is not None and p["threshold"] < 0:
        out.append("params.threshold must be non-negative or 'auto'")
    if not 0 <= s["low"] <= s["high"] <= 1:
        out.append("state.low and state.high must satisfy 0 <= low <= high <= 1")
    if not 0 <= s["value"] <= 1:
        out.append("state.value must lie in [0, 1]")
    if not 4 <= o["L"] <= fo.MAX_SITES or o["L"] % 2:
        out.append(f"oracle.L must be even and in [4, {fo.MAX_SITES}]")
    if not 1 <= o["max_order"] <= 3:
        out.append("oracle.max_order must be 1, 2 or 3")
    if o["cases"] < 1:
        out.append("oracle.cases must be positive")
    fmts = {x.strip() for x in v["output"]["formats"].split(",") if x.strip()}
    if not fmts <= {"csv", "json"}:
        out.append("output.formats accepts csv and json")
    return out


def _model(spec: RunSpec):
    m = spec.values["model"]
    grid = lat.build_grid(m["dim"], m["n"])
    q = grid.momenta
    eps = np.zeros(grid.size)
    for r_, c in enumerate(m["band_coeffs"], start=1):
        eps -= c * np.cos(r_ * q).sum(axis=1)
    eps = lat.Dispersion(grid, eps)
    if m["potential"] == "constant":
        v = lat.constant_potential(grid, m["potential_constant"])
    else:
        v = lat.cosine_potential(grid, m["potential_coeffs"])
    return grid, eps, v


def _initial_state(spec: RunSpec, grid, eps):
    s = spec.values["state"]
    rng = np.random.default_rng(spec.get("run", "seed"))
    kind = s["kind"]
    if kind == "random":
        w = rng.uniform(s["low"], s["high"], grid.size)
    elif kind in ("fermi-dirac", "density-wave"):
        w = lat.fermi_dirac(grid, eps, s["beta"], s["mu"]).w
    elif kind == "constant":
        w = np.full(grid.size, s["value"])
    else:
        w = (eps.values < s["mu"]).astype(float)
    state = lat.QuasifreeState(grid, w)
    if kind == "density-wave":
        return qf.density_wave(state, s["q"], s["amplitude"])
    return state


class _Writer:
    """Collects outputs, their hashes and the shared provenance header."""

    def __init__(self, spec: RunSpec, out: Path):
        self.out = out
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = {}
        fmts = {x.strip() for x in spec.get("output", "formats").split(",")}
        self.csv = "csv" in fmts
        self.json = "json" in fmts
        self.prov = {"tool": f"fermikinetics {__version__}", "spec_sha256": spec.digest(),
                     "scenario": spec.scenario, "seed": spec.get("run", "seed"),
                     "defaults": " ".join(spec.defaults)}

    def record(self, *paths):
        for p in paths:
            self.files[Path(p).name] = io.sha256_file(p)

    def csv_file(self, name, columns, rows):
        if self.csv:
            self.record(io.write_csv(self.out / name, columns, rows, self.prov))

    def json_file(self, name, obj):
        if self.json:
            self.record(io.write_json(self.out / name, obj, self.prov))


def _scenario_evolve(spec, w: _Writer, threads):
    grid, eps, v = _model(spec)
    p, r = spec.values["params"], spec.values["run"]
    params = col.ScalingParameters(lam=p["lambda"], eta=p["eta"])
    table = col.build_table(grid, eps, v, params, p["threshold"], p["mode"], p["max_entries"])
    log.info("collision table: %d entries, eta=%.6g", len(table), table.eta)
    state = _initial_state(spec, grid, eps)
    if not isinstance(state, lat.QuasifreeState):
        raise ConfigError("the kinetic equation needs a translation-invariant initial state")
    traj = kin.evolve(state.w, table, r["T"], r["dt"], r["monitor_every"], eps)
    if w.csv:
        w.record(io.write_trajectory(w.out / "trajectory.csv", traj, w.prov))
        if r["snapshots"]:
            for i, pt in enumerate(traj):
                w.record(*io.write_occupation(w.out / f"snapshot_{i:04d}.csv", grid, pt.w,
                                              w.prov, t=pt.t))
    tab = spec.get("output", "table")
    if tab in ("binary", "both"):
        w.record(io.save_table_binary(table, w.out / "table.bin"))
    if tab in ("csv", "both"):
        w.record(io.save_table_csv(table, w.out / "table.csv", w.prov))
    t = traj.step_t
    e_fit = float(np.polyfit(t, traj.step_e - traj.step_e[0], 1)[0]) if t.size > 1 else 0.0
    ds = np.diff(traj.step_s)
    summary = {
        "final": {"t": traj[-1].t, "rho": traj[-1].rho, "e": traj[-1].e, "s": traj[-1].s,
                  "dist_fd": traj[-1].dist_fd},
        "max_density_change": float(np.max(np.abs(traj.step_rho - traj.step_rho[0]))),
        "energy_drift_rate": e_fit,
        "min_entropy_increment": float(ds.min()) if ds.size else 0.0,
        "steps": {"accepted": traj.accepted, "rejected": traj.rejected},
        "table": {"entries": len(table), "eta": table.eta, "threshold": table.threshold,
                  "mode": table.mode},
    }
    w.json_file("summary.json", summary)
    return summary


def _scenario_equilibrium(spec, w: _Writer, threads):
    grid, eps, _ = _model(spec)
    s = spec.values["state"]
    if s["rho"] is not None and s["e"] is not None:
        rho, e = s["rho"], s["e"]
    else:
        state = _initial_state(spec, grid, eps)
        if not isinstance(state, lat.QuasifreeState):
            raise ConfigError("equilibrium matching needs a translation-invariant state")
        rho, e = lat.density_energy(state.w, eps)
    params = lat.match_equilibrium(rho, e, grid, eps)
    fd = lat.fermi_dirac_from_params(grid, eps, params)
    if w.csv:
        w.record(*io.write_occupation(w.out / "equilibrium.csv", grid, fd.w, w.prov))
    result = {"rho": rho, "e": e, "beta": params.beta, "mu": params.mu, "c": params.c,
              "degenerate": params.degenerate, "entropy": lat.entropy_density(fd.w)}
    w.json_file("equilibrium.json", result)
    return result


def _scenario_fluct(spec, w: _Writer, threads):
    grid, eps, _ = _model(spec)
    state = _initial_state(spec, grid, eps)
    A = qf.number_observable(grid, spec.get("observable", "site"))
    Ks = [k for k in spec.get("fluct", "K_list") if 2 * k <= grid.n]
    prof = qf.correlation_profile(state, A, A)
    if w.csv:
        w.record(io.write_profile(w.out / "correlation.csv", prof, w.prov))
        w.csv_file("block_variance.csv", ["K", "V_K"],
                   ((K, fl.block_variance(state, A, K)) for K in Ks))
    S = qf.covariance(state, A, A)
    result = {"mean": qf.mean(state, A), "S": S,
              "S_momentum": qf.covariance_momentum(state, A, A)
              if isinstance(state, lat.QuasifreeState) else None}
    if len(Ks) >= 4:
        lim = fl.variance_limit(state, A, Ks)
        result.update({"classification": lim.classification, "limit": lim.limit,
                       "defect": list(lim.defect), "growth_slope": lim.growth_slope,
                       "defect_slope": lim.defect_slope})
        result["weyl_char"] = float(np.exp(-S / 2)) if lim.classification == fl.CONVERGENT \
            else None
    w.json_file("forms.json", result)
    return result


def _scenario_scaling(spec, w: _Writer, threads):
    grid, eps, v = _model(spec)
    p = spec.values["params"]
    state = _initial_state(spec, grid, eps)
    A = qf.number_observable(grid, spec.get("observable", "site"))
    result = {}
    if p["moment"] in ("variance", "both") and isinstance(state, lat.QuasifreeState):
        rep = fl.regime_scan(state, v, p["lambda"], p["K_list"], p["N_list"], "variance", A, eps,
                             p["theta_r"], p["theta_d"], threads)
        if w.csv or w.json:
            w.record(*io.write_regime_report(w.out / "regime_variance", rep, w.prov))
        result["variance_exponent"] = rep.exponent
        result["labels"] = {f"{c.K}x{fmt_n(c.N)}": c.label for c in rep.cells}
    if p["moment"] in ("mean", "both"):
        rep = fl.regime_scan(state, v, p["lambda"], p["K_list"], p["N_list"], "mean", A, eps,
                             threads=threads)
        if w.csv or w.json:
            w.record(*io.write_regime_report(w.out / "regime_mean", rep, w.prov))
        result["mean_max"] = max(c.value for c in rep.cells)
    vals = fl.first_order_probe(state, v, p["lambda"], A, p["N_list"], eps)
    Ns = np.array(p["N_list"])
    w.csv_file("first_order.csv", ["N", "real", "imag", "abs"],
               ((N, z.real, z.imag, abs(z)) for N, z in zip(Ns, vals)))
    mags = np.abs(vals)
    if np.all(mags > 0) and len(Ns) >= 2:
        result["first_order_slope"] = float(np.polyfit(np.log(Ns), np.log(mags), 1)[0])
    w.json_file("scaling.json", result)
    return result


def fmt_n(x):
    return io.fmt(int(x)) if float(x).is_integer() else io.fmt(x)


def _scenario_oracle(spec, w: _Writer, threads):
    o = spec.values["oracle"]
    L = o["L"]
    rng = np.random.default_rng(spec.get("run", "seed"))
    grid = lat.build_grid(1, L)
    eps = lat.nearest_neighbor_band(grid)
    v = lat.cosine_potential(grid, spec.get("model", "potential_coeffs"))
    rep = fo.car_ops(L)
    rows = []
    worst = 0.0
    for case in range(o["cases"]):
        r = 1 + case % o["max_order"]
        wv = rng.uniform(0, 1, L)
        state = lat.QuasifreeState(grid, wv)
        rho = fo.gaussian_state(rep, wv)
        fs = [rng.normal(size=L) + 1j * rng.normal(size=L) for _ in range(r)]
        gs = [rng.normal(size=L) + 1j * rng.normal(size=L) for _ in range(r)]
        op = rep.identity
        for f in fs:
            op = op @ fo.creator(rep, f)
        for g in reversed(gs):
            op = op @ fo.annihilator(rep, g)
        exact = fo.exact_expect(rho, op)
        wick = qf.wick_expect(state, fs, gs)
        worst = max(worst, abs(exact - wick))
        rows.append((case, r, wick.real, wick.imag, exact.real, exact.imag, abs(exact - wick)))
    w.csv_file("wick_vs_fock.csv",
               ["case", "r", "wick_real", "wick_imag", "fock_real", "fock_imag", "abs_error"], rows)
    cstate = qf.random_correlated_state(grid, rng)
    rho = fo.gaussian_state_from_correlation(rep, cstate.position_correlation(), "position")
    A = qf.observable(grid, {0: 1.0, 1: 0.5j}, {0: 0.3, 1: 1.0})
    lam = spec.get("params", "lambda")
    drift = fl.weyl_drift(cstate, v, lam, A, o["t"], eps)
    exact = fo.exact_drift(rho, rep, eps, v, lam, A, o["t"])
    result = {"wick_max_error": worst, "drift": drift, "drift_exact": exact,
              "drift_relative_error": abs(drift - exact) / max(abs(exact), 1e-300)}
    w.json_file("oracle.json", result)
    return result


_RUNNERS = {"evolve": _scenario_evolve, "equilibrium": _scenario_equilibrium,
            "fluct": _scenario_fluct, "scaling": _scenario_scaling, "oracle": _scenario_oracle}


def run_scenario(spec: RunSpec, out: str | Path | None = None, threads: int = 1) -> dict:
    """Execute the scenario and write its artifacts plus ``manifest.json``.

    Returns the manifest as a dict.
    """
    outdir = Path(out if out is not None else spec.get("output", "dir"))
    writer = _Writer(spec, outdir)
    start = time.perf_counter()
    result = _run_limited(spec, writer, threads)
    wall = time.perf_counter() - start
    manifest = {
        "scenario": spec.scenario,
        "inputs": spec.flat(),
        "defaults_applied": spec.defaults,
        "spec_sha256": spec.digest(),
        "seed": spec.get("run", "seed"),
        "versions": {"fermikinetics": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "threads": threads,
        "wall_time_s": wall,
        "outputs": dict(sorted(writer.files.items())),
        "result": result,
    }
    io.write_json(outdir / "manifest.json", manifest)
    return manifest


def _run_limited(spec, writer, threads):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        return _RUNNERS[spec.scenario](spec, writer, threads)
    with threadpool_limits(limits=max(1, threads)):
        return _RUNNERS[spec.scenario](spec, writer, threads)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fermikinetics",
                                 description="Lattice fermion kinetics and fluctuation scenarios.")
    ap.add_argument("--config", required=True, help="configuration file (section.key = value)")
    ap.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads (results unaffected)")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    try:
        spec = parse_config(text)
        manifest = run_scenario(spec, args.out, args.threads)
    except FermiKineticsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    out = Path(args.out if args.out is not None else spec.get("output", "dir"))
    print(f"{spec.scenario}: wrote {len(manifest['outputs'])} files to {out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
