"""Command-line front door: scheduler queries, instance runs, eps-sweeps and the self-test.

Exit codes: 0 converged / ok, 1 infeasible or failed sweep member, 2 usage error,
3 stalled, 4 diverged, 5 iteration budget exhausted.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import math
import os
import sys
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import engine as en
from . import fnspace as fs
from . import hyperb as hb
from . import relax as rx
from . import scheduler as sc

CONFIG_VERSION = "v1"
EXIT_CODES = {en.CONVERGED: 0, en.STALLED: 3, en.DIVERGED: 4, en.BUDGET: 5}

PARAM_KEYS = ("k", "kappa", "gamma0", "gamma", "m", "r", "rprime", "s0", "alpha", "N", "p", "zeta", "theta0")


class UsageError(Exception):
    pass


@dataclasses.dataclass
class RunConfig:
    command: str = "run"
    instance: str = "relax"
    preset: str = "generic"
    eps: list = dataclasses.field(default_factory=lambda: [0.1])
    n: int | None = None
    newton: bool = False
    variant: str = "smooth"
    form: str = hb.NONCONSERVATIVE
    amplitude: float | None = None
    jmax: int = 20
    floor: float | None = None
    margin: float = 4.0
    seed: int = 0
    params: dict = dataclasses.field(default_factory=dict)
    observables: list = dataclasses.field(default_factory=lambda: ["corrector"])
    out: str = "nm_out"
    profile: bool = True

    def to_dict(self) -> dict:
        return {"version": CONFIG_VERSION, **dataclasses.asdict(self)}


def load_config(path: str) -> dict:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise UsageError("config file must hold a JSON object")
    if raw.pop("version", None) != CONFIG_VERSION:
        raise UsageError(f'config file must declare "version": "{CONFIG_VERSION}"')
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    bad = sorted(set(raw.get("params", {})) - set(PARAM_KEYS))
    if bad:
        raise UsageError(f"unknown parameter keys: {', '.join(bad)}")
    return raw


def _eps_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad eps list {text!r}") from exc
    if not vals or not all(0 < v < 1 for v in vals):
        raise argparse.ArgumentTypeError("eps values must lie in (0, 1)")
    return vals


def _add_param_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scheme parameters")
    for key in PARAM_KEYS:
        g.add_argument(f"--{key}", type=int if key == "N" else float, default=None)


def _params_from(args) -> dict:
    return {k: getattr(args, k) for k in PARAM_KEYS if getattr(args, k, None) is not None}


# ---- schedule ---------------------------------------------------------------

def _schedule_params(args) -> sc.NmParams:
    given = _params_from(args)
    base = sc.NmParams(**{k: v for k, v in given.items()}, eps=args.eps)
    free = {"alpha", "N", "p", "zeta"} - set(given)
    if free and sc.check_ass_k(base):
        try:
            picked = sc.feasible_pick(base)
        except sc.FeasibilityError:
            return base
        return picked.with_(**{k: v for k, v in given.items() if k not in free})
    return base


def cmd_schedule(args) -> int:
    params = _schedule_params(args)
    if args.what == "check":
        rep = sc.feasibility(params)
        _emit({"params": params.to_dict(), **rep.to_dict()})
        return 0 if rep.feasible else 1
    if args.what == "barp":
        if not sc.check_ass_k(params):
            _emit({"params": params.to_dict(), "pbar": None, "n_star": None, "ass_k_ok": False})
            return 1
        value, n_star = sc.pbar(params)
        real, n_real = sc.pbar_real(params)
        _emit({"pbar": value, "n_star": n_star, "pbar_real": real, "n_real": n_real})
        return 0
    if args.what == "window":
        lo, hi = sc.alpha_window(params)
        _emit({"N": params.N, "lo": lo, "hi": hi if math.isfinite(hi) else None,
               "nonempty": sc.window_nonempty((lo, hi))})
        return 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sched = sc.theta_schedule(params, args.jmax)
    _emit({"thetas": sched.thetas, "cond1_0": sched.cond1_0, "summable": sched.summable,
           "truncated": sched.truncated, "warnings": [str(w.message) for w in caught]})
    return 0


# ---- run --------------------------------------------------------------------

def _header(cfg: RunConfig, stamp: str, params: dict | None = None) -> str:
    head = f"# generated {stamp}\n# config {json.dumps(cfg.to_dict(), sort_keys=True)}\n"
    if params is not None:
        head += f"# params {json.dumps(params, sort_keys=True)}\n"
    return head


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv(columns: dict) -> str:
    names = list(columns)
    rows = zip(*(np.asarray(columns[c]) for c in names))
    return ",".join(names) + "\n" + "".join(",".join(repr(float(v)) for v in row) + "\n" for row in rows)


def _relax_config(cfg: RunConfig, eps: float) -> rx.RelaxConfig:
    params = rx.relax_params(eps, **cfg.params) if cfg.params else None
    return rx.RelaxConfig(n=cfg.n or 2048, jmax=cfg.jmax, floor=cfg.floor, newton=cfg.newton,
                          margin=cfg.margin, params=params)


def _hyp_config(cfg: RunConfig) -> hb.HypConfig:
    extra = dict(k_order=cfg.params.get("k", 4), jmax=cfg.jmax, newton=cfg.newton, margin=cfg.margin,
                 seed=cfg.seed, form=cfg.form)
    if cfg.floor is not None:
        extra["floor"] = cfg.floor
    if cfg.n is not None:
        extra["n_x"] = cfg.n
    if cfg.amplitude is not None:
        extra["amplitude"] = cfg.amplitude
    for key in ("theta0", "zeta"):
        if key in cfg.params:
            extra[key] = cfg.params[key]
    if cfg.variant == "rough":
        return hb.rough_config(**extra)
    return hb.HypConfig(variant=cfg.variant, **extra)


def run_member(cfg: RunConfig, eps: float) -> dict:
    """One instance solve; returns the result record plus CSV bodies."""
    if cfg.instance == "relax":
        model = rx.make_model(cfg.preset)
        full, res, prob = rx.solve_profile(model, eps, _relax_config(cfg, eps))
        record = res.summary()
        x = prob.grid.x
        record["corrector_sup"] = float(np.abs(res.u).max())
        record["corrector_e"] = prob.e_norm(res.u, prob.params.working_s)
        try:
            record["decay"] = rx.decay_fit(res.u, x).to_dict() if record["corrector_sup"] > 0 else None
        except ValueError as exc:
            record["decay"] = {"error": str(exc)}
        record["params"] = prob.params.to_dict()
        profile = {"x": x, "u": full[0], "v": full[1], "u_ce": prob.profile.u_ce, "v_ce": prob.profile.v_ce[0]}
    elif cfg.instance == "hyperb":
        res, inst = hb.solve(eps, _hyp_config(cfg))
        record = res.summary()
        record["corrector_sup"] = float(np.abs(res.u).max())
        record["corrector_e"] = inst.e_norm(res.u, inst.params.working_s)
        record["params"] = inst.params.to_dict()
        prob = inst.prob
        final = prob.approx()[-1] + res.u[-1]
        profile = {"x": prob.grid.x, "u_final": final, "u_exact_final": prob.exact()[-1]}
    else:
        raise UsageError(f"unknown instance {cfg.instance!r}")
    record["eps"] = eps
    return {"record": record, "trace": res.trace.to_csv(), "profile": _csv(profile)}


def cmd_run(cfg: RunConfig) -> int:
    eps = cfg.eps[0]
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    out = Path(cfg.out)
    member = run_member(cfg, eps)
    head = _header(cfg, stamp, member["record"]["params"])
    _write_atomic(out / "trace.csv", head + member["trace"])
    if cfg.profile:
        _write_atomic(out / "profile.csv", head + member["profile"])
    record = {"generated": stamp, "config": cfg.to_dict(), **member["record"]}
    _write_atomic(out / "result.json", json.dumps(record, indent=2, sort_keys=True, default=_jsonable) + "\n")
    print(json.dumps({k: record[k] for k in ("status", "steps", "final_res", "floor")}))
    return EXIT_CODES[record["status"]]


# ---- sweep ------------------------------------------------------------------

def _parse_observable(name: str) -> tuple[str, int | None]:
    for stem in ("ru_d", "rv_d"):
        if name.startswith(stem) and name[len(stem):].isdigit():
            return stem, int(name[len(stem):])
    if name in ("corrector", "residual", "operator"):
        return name, None
    raise UsageError(f"unknown observable {name!r}")


def theoretical_slope(instance: str, name: str, k_order: float) -> tuple[float, float, bool]:
    """(theoretical slope, tolerance, one-sided) for an observable."""
    stem, order = _parse_observable(name)
    if stem == "ru_d":
        return order + 4.0, 0.4, False
    if stem == "rv_d":
        return order + 3.0, 0.4, False
    if stem == "operator":
        return -1.0, 0.3, False
    if stem == "residual":
        return (k_order + 1.0 if instance == "hyperb" else 3.0), 0.3, False
    # corrector: the error law is a lower bound on the exponent
    return (k_order - 1.0 if instance == "hyperb" else 2.0), 0.3, True


def sweep_member(cfg: RunConfig, eps: float) -> dict:
    """Observable values at a single eps.  Solves only when an observable needs it."""
    stems = {_parse_observable(o)[0] for o in cfg.observables}
    values, status = {}, en.CONVERGED
    if cfg.instance == "relax":
        model = rx.make_model(cfg.preset)
        rcfg = _relax_config(cfg, eps)
        if stems & {"ru_d", "rv_d", "residual"}:
            prob = rx.build_problem(model, eps, rcfg)
            ru, rv = rx.ce_residual(model, prob.profile)
            for o in cfg.observables:
                stem, order = _parse_observable(o)
                if stem in ("ru_d", "rv_d"):
                    row = ru if stem == "ru_d" else rv[0]
                    values[o] = float(np.abs(fs.derivative_values(row, prob.grid, order)).max())
            if "residual" in stems:
                values["residual"] = prob.f_norm(prob.residual(prob.zero()), prob.params.working_s)
        if "operator" in stems:
            probe = rx.build_problem(model, eps, dataclasses.replace(rcfg, n=cfg.n or 4096))
            values["operator"] = rx.operator_norm_probe(probe, seed=cfg.seed)["ratio"]
        if "corrector" in stems:
            _, res, _ = rx.solve_profile(model, eps, rcfg)
            status = res.status
            values["corrector"] = float(np.abs(res.u).max())
    elif cfg.instance == "hyperb":
        hcfg = _hyp_config(cfg)
        if "residual" in stems:
            inst = hb.build(eps, hcfg)
            values["residual"] = inst.f_norm(inst.residual(inst.zero()), inst.params.working_s)
        if "corrector" in stems:
            res, inst = hb.solve(eps, hcfg)
            status = res.status
            values["corrector"] = inst.e_norm(res.u, inst.params.working_s)
        if stems - {"residual", "corrector"}:
            raise UsageError("hyperb sweeps support the residual and corrector observables")
    else:
        raise UsageError(f"unknown instance {cfg.instance!r}")
    return {"eps": eps, "status": status, "values": values}


def _member_job(cfg_dict: dict, eps: float, out: str) -> dict:
    cfg = RunConfig(**cfg_dict)
    try:
        rec = sweep_member(cfg, eps)
    except Exception as exc:  # reported in the table, the sweep goes on
        rec = {"eps": eps, "status": "error", "error": f"{type(exc).__name__}: {exc}", "values": {}}
    _write_atomic(Path(out) / f"member_eps{eps!r}.json", json.dumps(rec, sort_keys=True) + "\n")
    return rec


def fit_slope(eps: list[float], values: list[float]) -> float:
    """Ordinary least squares slope of log(values) against log(eps)."""
    return float(np.polyfit(np.log(eps), np.log(values), 1)[0])


def slope_table(cfg: RunConfig, members: list[dict]) -> list[dict]:
    k_order = float(cfg.params.get("k", 4 if cfg.instance == "hyperb" else 3))
    rows = []
    for o in cfg.observables:
        theo, tol, one_sided = theoretical_slope(cfg.instance, o, k_order)
        pts = [(m["eps"], m["values"][o]) for m in members if o in m["values"] and m["values"][o] > 0]
        if len(pts) < 2:
            rows.append({"observable": o, "slope": float("nan"), "theoretical": theo, "pass": False})
            continue
        slope = fit_slope(*zip(*pts))
        ok = slope >= theo - tol if one_sided else abs(slope - theo) <= tol
        rows.append({"observable": o, "slope": slope, "theoretical": theo, "pass": bool(ok and len(pts) == len(members))})
    return rows


def cmd_sweep(cfg: RunConfig) -> int:
    if len(cfg.eps) < 3:
        raise UsageError("a sweep needs at least three eps values")
    for o in cfg.observables:
        _parse_observable(o)
    out = Path(cfg.out)
    cap = int(os.environ.get("NM_THREADS", "0") or 0) or (os.cpu_count() or 1)
    workers = max(1, min(cap, len(cfg.eps)))
    cfg_dict = dataclasses.asdict(cfg)
    if workers == 1:
        members = [_member_job(cfg_dict, e, str(out)) for e in cfg.eps]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(_member_job, [cfg_dict] * len(cfg.eps), cfg.eps, [str(out)] * len(cfg.eps)))
    members.sort(key=lambda m: -m["eps"])
    rows = slope_table(cfg, members)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    body = "observable,slope,theoretical,pass\n" + "".join(
        f"{r['observable']},{r['slope']!r},{r['theoretical']!r},{'pass' if r['pass'] else 'fail'}\n" for r in rows)
    _write_atomic(out / "slopes.csv", _header(cfg, stamp) + body)
    sys.stdout.write(body)
    failed = [m for m in members if m["status"] != en.CONVERGED]
    for m in failed:
        print(f"member eps={m['eps']}: {m.get('error', m['status'])}", file=sys.stderr)
    return 1 if failed else 0


# ---- selftest ---------------------------------------------------------------

def cmd_selftest(args) -> int:
    rep = fs.smoothing_selftest(trials=args.trials, seed=args.seed)
    _emit({**rep.to_dict(), "passed": rep.passed})
    return 0 if rep.passed else 1


# ---- plumbing ---------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _emit(obj) -> None:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        if isinstance(v, dict):
            return {k: clean(w) for k, w in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(w) for w in v]
        return v
    print(json.dumps(clean(obj), indent=2, default=_jsonable))


def _instance_flags(p: argparse.ArgumentParser, sweep: bool) -> None:
    p.add_argument("instance", choices=("relax", "hyperb"))
    p.add_argument("--config", help="JSON config file (version v1)")
    p.add_argument("--preset", choices=rx.PRESETS, default=None)
    p.add_argument("--eps", type=_eps_list, default=None,
                   help="comma-separated list" if sweep else "single value")
    p.add_argument("--n", type=int, default=None, help="grid points")
    p.add_argument("--newton", action="store_true", default=None, help="plain Newton instead of Nash-Moser")
    p.add_argument("--variant", choices=("smooth", "rough"), default=None, help="hyperb data variant")
    p.add_argument("--form", choices=(hb.NONCONSERVATIVE, hb.CONSERVATIVE), default=None)
    p.add_argument("--amplitude", type=float, default=None, help="rough-data amplitude")
    p.add_argument("--jmax", type=int, default=None)
    p.add_argument("--floor", type=float, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    if sweep:
        p.add_argument("--observable", default=None,
                       help="comma list of corrector, residual, operator, ru_dK, rv_dK")
    else:
        p.add_argument("--no-profile", dest="profile", action="store_false", default=None)
    _add_param_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nashmoser", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("schedule", help="scheduler queries (JSON output)")
    ps.add_argument("what", choices=("check", "barp", "window", "thetas"))
    ps.add_argument("--eps", type=float, default=0.1)
    ps.add_argument("--jmax", type=int, default=10)
    _add_param_flags(ps)

    _instance_flags(sub.add_parser("run", help="solve one instance and write trace/result/profile"), sweep=False)
    _instance_flags(sub.add_parser("sweep", help="eps-sweep with log-log slope fits"), sweep=True)

    pt = sub.add_parser("selftest", help="smoothing and interpolation self-test")
    pt.add_argument("--trials", type=int, default=100)
    pt.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(args) -> RunConfig:
    base = load_config(args.config) if args.config else {}
    merged = {**dataclasses.asdict(RunConfig()), **base}
    merged["command"], merged["instance"] = args.command, args.instance
    for key in ("preset", "n", "newton", "variant", "form", "amplitude", "jmax", "floor", "margin", "seed", "out"):
        if getattr(args, key, None) is not None:
            merged[key] = getattr(args, key)
    if getattr(args, "profile", None) is not None:
        merged["profile"] = args.profile
    if args.eps is not None:
        merged["eps"] = args.eps
    elif args.command == "sweep" and "eps" not in base:
        merged["eps"] = [0.2, 0.1, 0.05]
    if getattr(args, "observable", None):
        merged["observables"] = [o.strip() for o in args.observable.split(",") if o.strip()]
    merged["params"] = {**merged.get("params", {}), **_params_from(args)}
    if args.command == "run" and len(merged["eps"]) != 1:
        raise UsageError("run takes a single eps value")
    return RunConfig(**merged)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "schedule":
            return cmd_schedule(args)
        if args.command == "selftest":
            return cmd_selftest(args)
        cfg = resolve_config(args)
        return cmd_run(cfg) if args.command == "run" else cmd_sweep(cfg)
    except (UsageError, sc.FeasibilityError) as exc:
        parser.print_usage(sys.stderr)
        print(f"nashmoser: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"nashmoser: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
