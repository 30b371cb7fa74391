"""Command-line experiment driver: field expressions, config files, JSON and CSV reports."""

from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, CritlabError, ExprSyntaxError, UnknownIdentifier
from .manifold import Field, Kind, ManifoldModel

EXPERIMENTS = ("solve", "classify", "bisect", "green", "mass", "blowup", "counterexample",
               "testfn", "probe")


# -- field expressions ------------------------------------------------------------------

_NUMBER = re.compile(r"\d+(\.\d*)?|\.\d+")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_UNARY = {"cos": np.cos, "sin": np.sin, "exp": np.exp, "abs": np.abs}
_NARY = {"min": np.minimum, "max": np.maximum}


class _Parser:
    """Recursive descent over the field grammar; evaluates while parsing."""

    def __init__(self, src: str, m: ManifoldModel):
        self.src = src
        self.pos = 0
        self.m = m
        self.shape = m.shape

    # lexing helpers
    def _skip(self) -> None:
        while self.pos < len(self.src) and self.src[self.pos].isspace():
            self.pos += 1

    def _peek(self) -> str:
        self._skip()
        return self.src[self.pos] if self.pos < len(self.src) else ""

    def _found(self) -> str:
        c = self._peek()
        return repr(c) if c else "end of input"

    def _expect(self, ch: str) -> None:
        if self._peek() != ch:
            raise ExprSyntaxError(self.pos, repr(ch), self._found())
        self.pos += 1

    # grammar
    def parse(self):
        val = self.expr()
        if self._peek():
            raise ExprSyntaxError(self.pos, "operator or end of input", self._found())
        return val

    def expr(self):
        val = self.term()
        while self._peek() and self._peek() in "+-":
            op = self.src[self.pos]
            self.pos += 1
            rhs = self.term()
            val = val + rhs if op == "+" else val - rhs
        return val

    def term(self):
        val = self.factor()
        while self._peek() and self._peek() in "*/":
            op = self.src[self.pos]
            self.pos += 1
            rhs = self.factor()
            val = val * rhs if op == "*" else val / rhs
        return val

    def factor(self):
        val = self.base()
        if self._peek() == "^":
            self.pos += 1
            self._skip()
            mt = _NUMBER.match(self.src, self.pos)
            if not mt:
                raise ExprSyntaxError(self.pos, "number", self._found())
            self.pos = mt.end()
            val = val ** float(mt.group())
        return val

    def base(self):
        c = self._peek()
        if not c:
            raise ExprSyntaxError(self.pos, "number, identifier, '(' or '-'", "end of input")
        if c == "-":
            self.pos += 1
            return -self.base()
        if c == "(":
            self.pos += 1
            val = self.expr()
            self._expect(")")
            return val
        mt = _NUMBER.match(self.src, self.pos)
        if mt:
            self.pos = mt.end()
            return float(mt.group())
        mt = _IDENT.match(self.src, self.pos)
        if mt:
            start = self.pos
            name = mt.group()
            self.pos = mt.end()
            if name in _UNARY or name in _NARY or name == "const":
                self._expect("(")
                args = self.args()
                self._expect(")")
                return self._call(name, args, start)
            return self._ident(name, start)
        raise ExprSyntaxError(self.pos, "number, identifier, '(' or '-'", self._found())

    def args(self) -> list:
        out = [self.expr()]
        while self._peek() == ",":
            self.pos += 1
            out.append(self.expr())
        return out

    def _call(self, name: str, args: list, pos: int):
        if name == "const":
            if len(args) != 1 or np.ndim(args[0]) != 0:
                raise ExprSyntaxError(pos, "const(number)", f"{len(args)} argument(s)")
            return np.full(self.shape, float(args[0]))
        if name in _UNARY:
            if len(args) != 1:
                raise ExprSyntaxError(pos, f"{name}(expr)", f"{len(args)} arguments")
            return _UNARY[name](args[0])
        if len(args) < 2:
            raise ExprSyntaxError(pos, f"{name}(expr, expr, ...)", f"{len(args)} argument")
        val = args[0]
        for a in args[1:]:
            val = _NARY[name](val, a)
        return val

    def _ident(self, name: str, pos: int):
        m = self.m
        if name == "pi":
            return math.pi
        if name == "r":
            return m.distance_from(0.0)
        mt = re.fullmatch(r"x([1-9][0-9]*)", name)
        if mt and not m.is_radial:
            j = int(mt.group(1))
            if 1 <= j <= m.dim:
                return m.coords[j - 1]
        raise UnknownIdentifier(name, pos)


def parse_field_expr(src: str, m: ManifoldModel) -> Field:
    """Sample a field expression on the grid of m.

    Identifiers: r (distance to the reference point), x1..xn (torus
    coordinates), pi, and the functions const, cos, sin, exp, abs, min, max.
    """
    val = _Parser(src, m).parse()
    return m.field(np.array(np.broadcast_to(np.asarray(val, dtype=float), m.shape)))


# -- configuration -------------------------------------------------------------------------

DEFAULTS: Dict[str, Any] = {
    "manifold": "sphere", "dim": 3, "nodes": None, "side": 1.0, "radius": 1.0,
    "h": "const(0.75)", "f": "const(1)", "tol": 1e-9, "q": None, "pole": 0.0,
    "band": 0.02, "levels": 9, "q_start": 2.2,
    "path": "HMinusTEta", "eta": None, "alpha": 0.0, "t_lo": 0.0, "t_hi": 1.0, "tol_t": 1e-3,
    "schedule": "quadratic", "members": 8, "eps": "0.02,0.03,0.04,0.05,0.07,0.1",
    "fit_window": None, "k_list": "100,200,400,800,1600", "delta": None,
    "t_list": "0.4,0.2,0.1", "R_list": "1,3,10,30", "delta_list": "0.1,0.3,0.5",
    "json": None, "csv": None,
}

INT_KEYS = {"dim", "nodes", "levels", "members"}
FLOAT_KEYS = {"side", "radius", "tol", "q", "band", "q_start", "alpha", "t_lo", "t_hi", "tol_t",
              "delta"}


def read_config_file(path: str) -> Dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment."""
    out: Dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{no}: expected 'key = value'")
        k, v = line.split("=", 1)
        key = k.strip().replace("-", "_")
        if key not in DEFAULTS and key != "experiment":
            raise ConfigError(f"{path}:{no}: unknown key '{k.strip()}'")
        out[key] = v.strip()
    return out


def _coerce(key: str, value: Any) -> Any:
    if value is None:
        return None
    try:
        if key in INT_KEYS:
            return int(value)
        if key in FLOAT_KEYS:
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    if key == "pole" and isinstance(value, str):
        parts = [p for p in value.split(",") if p.strip()]
        try:
            nums = [float(p) for p in parts]
        except ValueError as exc:
            raise ConfigError(f"bad value for pole: {value!r}") from exc
        return nums[0] if len(nums) == 1 else nums
    return value


def merge_config(experiment: str, file_values: Dict[str, str], cli_values: Dict[str, Any]
                 ) -> Dict[str, Any]:
    """Defaults, then config-file keys, then explicit command-line flags."""
    cfg = dict(DEFAULTS)
    for k, v in file_values.items():
        if k != "experiment":
            cfg[k] = v
    for k, v in cli_values.items():
        if v is not None and k in DEFAULTS:
            cfg[k] = v
    cfg = {k: _coerce(k, v) for k, v in cfg.items()}
    cfg["experiment"] = experiment
    return cfg


def _floats(s: Any) -> List[float]:
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    try:
        return [float(v) for v in str(s).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of numbers, got {s!r}") from exc


def build_manifold(cfg: Dict[str, Any]) -> ManifoldModel:
    kind = str(cfg["manifold"]).lower()
    n = cfg["dim"]
    nodes = cfg["nodes"]
    if kind == "sphere":
        return ManifoldModel.sphere(n, nodes or 4096)
    if kind == "ball":
        return ManifoldModel.ball(n, cfg["radius"], nodes or 4096)
    if kind == "torus":
        return ManifoldModel.torus(n, cfg["side"], nodes)
    raise ConfigError(f"unknown manifold '{cfg['manifold']}' (sphere, torus, ball)")


# -- experiments ----------------------------------------------------------------------------

@dataclass
class Outcome:
    results: Dict[str, Any]
    header: Sequence[str]
    rows: List[Sequence[Any]]


def _triple(cfg):
    from .functional import Triple
    m = build_manifold(cfg)
    return Triple(parse_field_expr(cfg["h"], m), parse_field_expr(cfg["f"], m), m)


def _schedule(cfg):
    from .functional import ContinuationSchedule
    return ContinuationSchedule(q_start=cfg["q_start"], levels=cfg["levels"], tol=cfg["tol"])


def _radial_or_axis(m: ManifoldModel, values: np.ndarray):
    if m.is_radial:
        return m.r, values
    idx = (slice(None),) + (0,) * (m.dim - 1)
    return m.axis, values[idx]


def run_solve(cfg) -> Outcome:
    from .functional import solve_subcritical
    t = _triple(cfg)
    q = cfg["q"] if cfg["q"] is not None else t.q2star - 0.1
    rep = solve_subcritical(t, q, cfg["tol"])
    x, u = _radial_or_axis(t.manifold, rep.u.values)
    return Outcome(rep.to_dict(), ("x", "u"), list(zip(x.tolist(), u.tolist())))


def run_classify(cfg) -> Outcome:
    from .functional import classify
    t = _triple(cfg)
    c = classify(t, _schedule(cfg), cfg["band"])
    rows = []
    if c.estimate is not None:
        rows = list(zip(c.estimate.exponents, c.estimate.lambdas))
    return Outcome(c.to_dict(), ("q", "lambda"), rows)


def run_bisect(cfg) -> Outcome:
    from .search import PathKind, PathSpec, bisect_t0
    t = _triple(cfg)
    try:
        kind = PathKind(cfg["path"])
    except ValueError as exc:
        raise ConfigError(f"unknown path kind {cfg['path']!r}") from exc
    if cfg["eta"] is None:
        direction = t.f if kind in (PathKind.F_LINEAR_TO_ONE, PathKind.F_LINEAR_TO_SUP) else None
        if direction is None:
            raise ConfigError("H-paths need --eta")
    else:
        direction = parse_field_expr(cfg["eta"], t.manifold)
    path = PathSpec(kind, t, direction, (cfg["t_lo"], cfg["t_hi"]), cfg["alpha"])
    res = bisect_t0(path, cfg["tol_t"], _schedule(cfg), cfg["band"])
    out = {"t0": res.t0, "status": res.status, "bracket": list(res.bracket),
           "kinds": list(res.kinds), "monotone": res.monotone}
    return Outcome(out, ("t", "lambda", "classification"), res.series())


def run_green(cfg) -> Outcome:
    from .green import build_green, weak_identity_errors
    m = build_manifold(cfg)
    h = parse_field_expr(cfg["h"], m)
    gf = build_green(m, h, cfg["pole"], cfg["delta"], check_weak=False)
    errs = weak_identity_errors(gf)
    out = {"delta": gf.delta, "weak_identity_errors": errs, "max_weak_error": max(errs)}
    if m.dim == 3:
        out["mass"] = gf.mass
    with np.errstate(divide="ignore", invalid="ignore"):
        x, g = _radial_or_axis(m, gf.values())
    rows = [(a, b) for a, b in zip(x.tolist(), g.tolist()) if np.isfinite(b)]
    return Outcome(out, ("r", "G"), rows)


def run_mass(cfg) -> Outcome:
    from .green import mass_fit
    m = build_manifold(cfg)
    h = parse_field_expr(cfg["h"], m)
    window = tuple(_floats(cfg["fit_window"])) if cfg["fit_window"] else None
    fit = mass_fit(m, h, cfg["pole"], window)
    out = {"mass": fit.mass, "stderr": fit.stderr, "slope": fit.slope,
           "fit_window": list(fit.window), "points": fit.points}
    return Outcome(out, ("h_expr", "mass", "stderr"), [(cfg["h"], fit.mass, fit.stderr)])


def run_blowup(cfg) -> Outcome:
    from .blowup import concentration_diagnostics, member_from_report, pohozaev_from_solution
    from .functional import solve_subcritical
    t = _triple(cfg)
    sched = _schedule(cfg)
    members = []
    start = None
    for j, q in enumerate(sched.exponents(t.n)):
        rep = solve_subcritical(t, float(q), sched.tol, start, sched.max_iter)
        start = rep.u
        members.append((rep, member_from_report(rep, float(j))))
    x0 = members[-1][1].x_t
    diag = concentration_diagnostics([mb for _, mb in members], x0, _floats(cfg["R_list"]),
                                     _floats(cfg["delta_list"]), t.f)
    out = diag.to_dict()
    if t.manifold.kind is Kind.FLAT_TORUS:
        dl = cfg["delta"] or 0.25 * t.manifold.extent
        out["pohozaev"] = [pohozaev_from_solution(t, rep, mb.x_t, dl) for rep, mb in members]
    rows = [(rep.q, mb.mu_t, rep.lam) for rep, mb in members]
    return Outcome(out, ("q", "mu", "lambda"), rows)


def run_counterexample(cfg) -> Outcome:
    from .blowup import concentration_diagnostics, sphere_counterexample_family
    n = cfg["dim"]
    count = cfg["members"]
    ds = [10.0 ** -(j + 1) for j in range(count)]
    mode = str(cfg["schedule"]).lower()
    if mode == "quadratic":
        mus = [d * d for d in ds]
    elif mode == "linear":
        mus = [0.1 * d for d in ds]
    else:
        raise ConfigError(f"unknown schedule {cfg['schedule']!r} (quadratic, linear)")
    fam = sphere_counterexample_family(n, 0.0, list(zip(ds, mus)))
    Rs = _floats(cfg["R_list"])
    rep = concentration_diagnostics(fam, 0.0, Rs, _floats(cfg["delta_list"]))
    out = rep.to_dict()
    out["norm_constants"] = [mb.norm_constant for mb in fam]
    rows = []
    for mb, d in zip(fam, ds):
        rows.append((mb.t, d, mb.mu_t, rep.second_ratio[mb.t], rep.weak_sup[mb.t],
                     rep.strong_sup[mb.t], rep.ball_mass[(mb.t, Rs[-1])]))
    return Outcome(out, ("t", "d", "mu", "second_ratio", "weak_sup", "strong_sup",
                         f"ball_mass_R{Rs[-1]:g}"), rows)


def run_testfn(cfg) -> Outcome:
    from .testfn import (aubin_J_quadrature, aubin_expansion, dim3_weakly_critical_test,
                         laplacian_at)
    t = _triple(cfg)
    m = t.manifold
    if m.dim == 3:
        window = tuple(_floats(cfg["fit_window"])) if cfg["fit_window"] else (0.0, 0.05)
        rep = dim3_weakly_critical_test(t, cfg["pole"], _floats(cfg["eps"]), window,
                                        _schedule(cfg))
        return Outcome(rep.to_dict(), ("eps", "deficit"), list(zip(rep.eps, rep.deficits)))
    if not m.is_radial:
        raise ConfigError("the Aubin sweep runs on radial models")
    delta = cfg["delta"] or 0.5
    hP = float(t.h.values[0])
    ratio = laplacian_at(m, t.f, 0.0) / float(t.f.values[0])
    rows = []
    for k in _floats(cfg["k_list"]):
        J = aubin_J_quadrature(m, k, delta, hP, float(t.f.values[0]))
        pred = aubin_expansion(m.dim, hP, m.scalar_curvature, ratio, k, t.sup_f)
        rows.append((k, J, pred, k * (J - pred)))
    out = {"delta": delta, "h_P": hP, "lapf_over_f": ratio, "ceiling": t.ceiling.value}
    return Outcome(out, ("k", "J", "prediction", "k_times_error"), rows)


def run_probe(cfg) -> Outcome:
    from .search import laplacian_blowup_probe
    t = _triple(cfg)
    rep = laplacian_blowup_probe(t, _floats(cfg["t_list"]), cfg["pole"], _schedule(cfg))
    rows = list(zip(rep.t_list, rep.lapf, rep.rhs, rep.gaps, rep.classifications))
    return Outcome(rep.to_dict(), ("t", "lapf", "rhs", "gap", "classification"), rows)


RUNNERS: Dict[str, Callable[[Dict[str, Any]], Outcome]] = {
    "solve": run_solve, "classify": run_classify, "bisect": run_bisect, "green": run_green,
    "mass": run_mass, "blowup": run_blowup, "counterexample": run_counterexample,
    "testfn": run_testfn, "probe": run_probe,
}


# -- output ----------------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="critlab", description="Critical-function experiments.")
    sub = p.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="file of 'key = value' lines")
        for key in DEFAULTS:
            s.add_argument("--" + key.replace("_", "-"), dest=key, default=None)
    return p


def run(cfg: Dict[str, Any], stdout=None, stderr=None) -> int:
    """Run one experiment; returns the exit code (0 ok, 2 solver error, 3 config error)."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        outcome = RUNNERS[cfg["experiment"]](cfg)
    except ConfigError as exc:
        print(f"critlab: configuration error: {exc}", file=stderr)
        return 3
    except CritlabError as exc:
        print(f"critlab: solver error: {type(exc).__name__}: {exc}", file=stderr)
        return 2
    tolerances = {k: cfg[k] for k in ("tol", "band", "tol_t") if cfg.get(k) is not None}
    report = {"experiment": cfg["experiment"], "config": cfg, "tolerances": tolerances,
              "results": outcome.results}
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True)
    try:
        if cfg.get("json"):
            with open(cfg["json"], "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        else:
            print(text, file=stdout)
        if cfg.get("csv"):
            write_csv(cfg["csv"], outcome.header, outcome.rows)
    except OSError as exc:
        print(f"critlab: cannot write output: {exc}", file=stderr)
        return 3
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 3
    cli = vars(args)
    experiment = cli.pop("experiment")
    try:
        file_values = read_config_file(cli.pop("config")) if cli.get("config") else {}
        cli.pop("config", None)
        cfg = merge_config(experiment, file_values, cli)
    except ConfigError as exc:
        print(f"critlab: configuration error: {exc}", file=sys.stderr)
        return 3
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
