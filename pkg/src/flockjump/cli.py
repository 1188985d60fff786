"""Command line entry point: ``flockjump <subcommand> --config PATH``.

Every subcommand reads one JSON config (schema in :data:`CONFIG_SCHEMA`),
writes CSV payloads plus a ``*.json`` sidecar into ``--out`` and returns
0 on success. CSV payloads depend only on the config and seed; run
timestamps go to the sidecar.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .model import (DeterministicUnit, Exponential, ExponentialUnit, ModelError, Step,
                    initial_from_dict, law_from_dict, rate_from_dict)
from .seeding import U64_MAX, config_hash

SUBCOMMANDS = ("simulate", "meanfield", "wave", "gap2", "lattice3", "evt", "compare", "sweep")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "scenario": {"type": "string"},
        "rate": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["exponential", "step", "bounded_smooth", "tabulated"]},
                "beta": _pos, "a": _pos, "b": _pos, "a_prime": _pos,
                "shape": {"enum": ["logistic", "arctan"]},
                "xs": {"type": "array", "items": _num},
                "ys": {"type": "array", "items": _pos},
            },
            "additionalProperties": False,
        },
        "law": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["deterministic", "exponential"]}},
            "additionalProperties": False,
        },
        "n": {"oneOf": [_posint, {"type": "array", "items": _posint, "minItems": 1}]},
        "initial": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["point", "iid", "explicit"]},
                "family": {"enum": ["gaussian", "uniform", "laplace"]},
                "loc": _num, "scale": _pos,
                "positions": {"type": "array", "items": _num},
            },
            "additionalProperties": False,
        },
        "T": _pos,
        "schedule": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "seed": {"type": "integer", "minimum": 0, "maximum": U64_MAX},
        "replicas": _posint,
        "method": {"enum": ["auto", "direct", "thinning", "exponential"]},
        "max_events": _posint,
        "grid": {
            "type": "object",
            "properties": {"dx": _pos, "x_min": _num, "width": _pos},
            "additionalProperties": False,
        },
        "gap": {
            "type": "object",
            "properties": {"g_max": _pos, "n_intervals": _posint, "k_max": _posint},
            "additionalProperties": False,
        },
        "lattice": {
            "type": "object",
            "properties": {"radius": _posint},
            "additionalProperties": False,
        },
        "evt": {
            "type": "object",
            "properties": {"beta": _pos, "n_samples": _posint, "dt": _pos,
                           "replicas": _posint, "alpha": _pos},
            "additionalProperties": False,
        },
        "output": {"type": "string"},
    },
}

REQUIRED = {
    "simulate": ["rate", "law", "n", "T"],
    "meanfield": ["rate", "law", "initial", "T"],
    "wave": ["rate"],
    "gap2": ["rate"],
    "lattice3": ["rate"],
    "evt": ["evt"],
    "compare": ["rate", "law", "n", "initial", "T"],
    "sweep": ["rate", "law", "n", "initial", "T"],
}


class ConfigError(ValueError):
    pass


def load_config(path, subcommand: str, seed=None) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        msgs = [f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("config schema violation:\n  " + "\n  ".join(msgs))
    missing = [k for k in REQUIRED[subcommand] if k not in cfg]
    if missing:
        raise ConfigError(f"{subcommand} needs config fields: {', '.join(missing)}")
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg.setdefault("seed", 0)
    return cfg


# ---------------------------------------------------------------------------
# Output helpers


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


# Units of CSV columns. Time is process time and lengths are in units of
# the mean jump length (the model has no other scales).
UNITS = {
    "t": "time", "m_n": "length", "m": "length", "mdot": "length/time",
    "speed_identity": "length/time", "jumps": "count", "x": "length",
    "rho": "1/length", "g": "length", "p": "1/length", "k": "jump lengths",
    "pi": "probability", "u1": "jump lengths/3", "u2": "jump lengths/3",
    "u3": "jump lengths/3", "n": "particles", "seed": "replica index",
    "replica": "index", "value": "length", "d1": "length", "dK": "probability",
    "dH": "dimensionless",
}


def _column(name: str) -> str:
    unit = UNITS.get(name, "length" if name.startswith("q") else None)
    return f"{name} [{unit}]" if unit else name


def write_csv(path: Path, header, rows):
    """RFC-4180 CSV (CRLF, minimal quoting) with units in the header row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        wr.writerow([_column(h) for h in header])
        for r in rows:
            wr.writerow([_fmt(v) for v in r])


def write_json(path: Path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _sidecar(out: Path, name: str, cfg: dict, subcommand: str, summary: dict, files):
    payload_cfg = {k: v for k, v in cfg.items() if k != "output"}
    write_json(out / f"{name}.json", {
        "subcommand": subcommand,
        "config_hash": config_hash(payload_cfg),
        "seed": cfg.get("seed", 0),
        "config": payload_cfg,
        "files": list(files),
        "summary": summary,
        "version": __version__,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    })


def _hash(cfg):
    return config_hash({k: v for k, v in cfg.items() if k != "output"})


# ---------------------------------------------------------------------------
# Subcommands


def _sim_config(cfg, n, replica):
    from .simulator import SimulationConfig
    return SimulationConfig(rate_from_dict(cfg["rate"]), law_from_dict(cfg["law"]), int(n),
                            initial_from_dict(cfg.get("initial", {"kind": "point"})),
                            seed=cfg["seed"], replica=replica,
                            method=cfg.get("method", "auto"),
                            max_events=cfg.get("max_events", 10**9))


def _schedule(cfg):
    T = float(cfg["T"])
    sched = cfg.get("schedule") or [T]
    return sorted(set(float(s) for s in sched if s <= T) | {T})


QS = (0.1, 0.25, 0.5, 0.75, 0.9)


def cmd_simulate(cfg, out: Path, jobs: int) -> dict:
    from .simulator import simulate
    ns = cfg["n"] if isinstance(cfg["n"], list) else [cfg["n"]]
    files, summary = [], {}
    h = _hash(cfg)
    for n in ns:
        for r in range(cfg.get("replicas", 1)):
            sc = _sim_config(cfg, n, r)
            rec = simulate(sc, float(cfg["T"]), _schedule(cfg))
            q = rec.quantiles(QS)
            name = f"trajectory_n{n}_r{r}.csv"
            write_csv(out / name, ["t", "m_n", "jumps"] + [f"q{int(100 * p)}" for p in QS],
                      [(t, m, j, *qq) for t, m, j, qq in zip(rec.times, rec.m, rec.jumps, q)])
            files.append(name)
            summary[f"n{n}_r{r}"] = {"final_m": float(rec.m[-1]), "jumps": int(rec.jumps[-1]),
                                     "method": rec.method, "truncated": rec.truncated,
                                     "run_hash": rec.config_hash}
    _sidecar(out, "simulate", cfg, "simulate", summary, files)
    return {"config_hash": h, **summary}


def _mf_initial(cfg):
    from .meanfield import GridDensity
    init = initial_from_dict(cfg["initial"])
    grid = cfg.get("grid", {})
    dx = float(grid.get("dx", 2.0**-6))
    width = float(grid.get("width", 128.0))
    x_min = float(grid.get("x_min", init.loc - width / 2))
    n_cells = int(round(width / dx))
    if n_cells & (n_cells - 1):
        raise ConfigError("grid width / dx must be a power of two")
    if init.kind == "iid":
        return GridDensity.from_cdf(init.cdf, x_min, x_min + width, n_cells)
    if init.kind == "point":
        # one cell of mass 1 at the point
        vals = np.zeros(n_cells)
        vals[int((init.loc - x_min) / dx)] = 1.0 / dx
        return GridDensity(x_min, x_min + width, vals)
    raise ConfigError("meanfield needs a point or iid initial condition")


def run_meanfield(cfg):
    from .meanfield import mf_evolve
    rho0 = _mf_initial(cfg)
    return mf_evolve(rho0, rate_from_dict(cfg["rate"]), law_from_dict(cfg["law"]),
                     float(cfg["T"]), _schedule(cfg))


def cmd_meanfield(cfg, out: Path, jobs: int) -> dict:
    from .metrics import GridMeasure
    run = run_meanfield(cfg)
    rows = []
    for k, t in enumerate(run.times):
        g = GridMeasure(run.snapshots[k])
        qs = [float(np.interp(p, g._cum, g.edges)) for p in QS]
        rows.append((t, run.m[k], run.speed[k], run.speed_identity[k], *qs))
    write_csv(out / "meanfield.csv",
              ["t", "m", "mdot", "speed_identity"] + [f"q{int(100 * p)}" for p in QS], rows)
    files = ["meanfield.csv"]
    for k, t in enumerate(run.times):
        name = f"density_t{t:g}.csv"
        s = run.snapshots[k]
        write_csv(out / name, ["x", "rho"], zip(s.centers, s.values))
        files.append(name)
    summary = {"max_step_mass_change": run.max_step_mass_change,
               "cumulative_mass_drift": run.cumulative_mass_drift,
               "max_speed_residual": float(np.nanmax(run.speed_residual())),
               "dt": run.dt, "steps": run.steps, "log": run.log}
    _sidecar(out, "meanfield", cfg, "meanfield", summary, files)
    return summary


def cmd_wave(cfg, out: Path, jobs: int) -> dict:
    from .waves import gumbel_wave, laplace_wave, traveling_wave
    w = rate_from_dict(cfg["rate"])
    law = law_from_dict(cfg["law"]) if "law" in cfg else ExponentialUnit()
    if not isinstance(law, ExponentialUnit):
        raise ConfigError("traveling waves are computed for exponential jumps")
    if isinstance(w, Exponential):
        sol = gumbel_wave(w.beta)
        summary = {"beta": w.beta}
    elif isinstance(w, Step):
        sol = laplace_wave(w.a, w.b)
        summary = {"a": w.a, "b": w.b}
    else:
        sol = traveling_wave(w)
        summary = {"rate": w.to_dict()}
    summary.update({"c": sol.c, "K": sol.K})
    lo, hi = sol.window
    x = np.linspace(max(lo, -40.0), min(hi, 40.0), 4001)
    write_csv(out / "wave.csv", ["x", "rho"], zip(x, sol.pdf(x)))
    _sidecar(out, "wave", cfg, "wave", summary, ["wave.csv"])
    return summary


def cmd_gap2(cfg, out: Path, jobs: int) -> dict:
    from .exact_small import (GapChain, bd_stationary, gap_stationary_closed_form,
                              relax_gap_density)
    w = rate_from_dict(cfg["rate"])
    law = law_from_dict(cfg.get("law", {"kind": "exponential"}))
    gap = cfg.get("gap", {})
    if isinstance(law, DeterministicUnit):
        st = bd_stationary(GapChain(w, gap.get("k_max", 200)))
        write_csv(out / "gap2.csv", ["k", "pi"], enumerate(st.pi))
        summary = {"detailed_balance_residual": st.detailed_balance_residual,
                   "tail_bound": st.tail_bound, "kind": "birth-death"}
    else:
        if isinstance(w, Exponential):
            dens = gap_stationary_closed_form(w.beta, gap.get("g_max"),
                                              gap.get("n_intervals", 4096))
        else:
            dens = relax_gap_density(w, law, gap.get("g_max", 24.0),
                                     gap.get("n_intervals", 1 << 11)).density
        write_csv(out / "gap2.csv", ["g", "p"], zip(dens.grid, dens.values))
        summary = {"g_max": dens.g_max, "integral": dens.integral(), "note": dens.note,
                   "kind": "density"}
    _sidecar(out, "gap2", cfg, "gap2", summary, ["gap2.csv"])
    return summary


def cmd_lattice3(cfg, out: Path, jobs: int) -> dict:
    from .exact_small import three_particle_stationary
    w = rate_from_dict(cfg["rate"])
    R = cfg.get("lattice", {}).get("radius", 96)
    st = three_particle_stationary(w, R)
    write_csv(out / "lattice3.csv", ["u1", "u2", "u3", "pi"],
              ((*s, p) for s, p in zip(st.states.tolist(), st.pi)))
    summary = {"radius": R, "boundary_flux": st.boundary_flux,
               "symmetry_defect": st.symmetry_defect(), "cycle_currents": st.cycle_currents(),
               "residual": st.residual}
    _sidecar(out, "lattice3", cfg, "lattice3", summary, ["lattice3.csv"])
    return summary


def cmd_evt(cfg, out: Path, jobs: int) -> dict:
    from .evt import ks_limit_law, ks_two_sample, simulate_particle, simulate_records
    e = cfg["evt"]
    beta = float(e.get("beta", 1.0))
    n, dt, reps = int(e.get("n_samples", 2000)), float(e.get("dt", 1.0)), int(e.get("replicas", 10))
    alpha = float(e.get("alpha", 0.01))
    part = simulate_particle(beta, n, dt, reps, cfg["seed"])
    summary = {"beta": beta, "c": part.c, "t_burn": part.t_burn}
    files = ["evt_particle.csv"]
    _dump_samples(out / "evt_particle.csv", part)
    kp = ks_limit_law(part, alpha)
    summary["particle_vs_limit"] = vars(kp)
    if abs(1.0 / beta - round(1.0 / beta)) < 1e-12:
        rec = simulate_records(beta, n, dt, reps, cfg["seed"])
        _dump_samples(out / "evt_records.csv", rec)
        files.append("evt_records.csv")
        summary["records_vs_limit"] = vars(ks_limit_law(rec, alpha))
        summary["records_vs_particle"] = vars(ks_two_sample(rec, part, alpha))
    _sidecar(out, "evt", cfg, "evt", summary, files)
    return summary


def _dump_samples(path, s):
    t = s.t_burn + s.dt * np.arange(s.values.shape[1])
    write_csv(path, ["replica", "t", "value"],
              ((r, tt, v) for r in range(s.values.shape[0]) for tt, v in zip(t, s.values[r])))


def _compare_job(args):
    cfg, n, r = args
    from .simulator import simulate
    sc = _sim_config(cfg, n, r)
    return sc, simulate(sc, float(cfg["T"]), _schedule(cfg))


def _comparison(cfg, out: Path, jobs: int, name: str) -> dict:
    from .metrics import fluid_limit_report
    ns = cfg["n"] if isinstance(cfg["n"], list) else [cfg["n"]]
    reps = cfg.get("replicas", 1)
    tasks = [(cfg, n, r) for n in ns for r in range(reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_compare_job, tasks))
    else:
        results = [_compare_job(t) for t in tasks]
    mf = run_meanfield(cfg)
    table = fluid_limit_report(results, mf)
    header = ["n", "t", "seed", "d1", "dK", "dH"]
    if name == "sweep":
        jobdir = out / "jobs"
        jobdir.mkdir(exist_ok=True)
        for (sc, _), (_, n, r) in zip(results, tasks):
            write_csv(jobdir / f"n{n}_r{r}.csv", header,
                      [row for row in table.rows if row[0] == n and row[2] == r])
    write_csv(out / f"{name}.csv", header, table.rows)
    summary = {"means": {f"n={n},t={t:g}": v for (n, t), v in table.means.items()},
               "slopes": {f"{t:g}": s for t, s in table.slopes.items()},
               "warning": table.warning}
    _sidecar(out, name, cfg, name, summary, [f"{name}.csv"])
    return summary


def cmd_compare(cfg, out, jobs):
    return _comparison(cfg, out, jobs, "compare")


def cmd_sweep(cfg, out, jobs):
    return _comparison(cfg, out, jobs, "sweep")


COMMANDS = {"simulate": cmd_simulate, "meanfield": cmd_meanfield, "wave": cmd_wave,
            "gap2": cmd_gap2, "lattice3": cmd_lattice3, "evt": cmd_evt,
            "compare": cmd_compare, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flockjump",
                                description="Jump processes driven by the center of mass.")
    p.add_argument("--version", action="version", version=f"flockjump {__version__}")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=COMMANDS[name].__doc__ or f"run {name}")
        sp.add_argument("--config", required=True, metavar="PATH", help="JSON config file")
        sp.add_argument("--seed", type=int, default=None, metavar="U64",
                        help="master seed (overrides the config)")
        sp.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="parallel jobs for multi-run subcommands")
        sp.add_argument("--out", default=None, metavar="DIR", help="output directory")
    return p


def dispatch(subcommand: str, cfg: dict, out: Path, jobs: int = 1) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    return COMMANDS[subcommand](cfg, out, max(1, jobs))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed <= U64_MAX:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = load_config(args.config, args.command, args.seed)
        out = Path(args.out or cfg.get("output") or f"out_{args.command}")
        if out.exists() and any(out.iterdir()):
            raise ConfigError(f"output directory {out} is not empty (one experiment per directory)")
        summary = dispatch(args.command, cfg, out, args.jobs)
    except (ConfigError, ModelError, OSError) as exc:
        print(f"flockjump {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # module errors, with context
        print(f"flockjump {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2, sort_keys=True, default=_jsonable))
    return 0


if __name__ == "__main__":
    sys.exit(main())
