"""Scenario-driven pipeline: continuation, certification, CSV / JSON output.

    l1crtbp solve SCENARIO.toml [--out DIR] [--jcurve] [--lambda-grid 0,0.5,1]
    l1crtbp certify DIR/extremal.json

Exit codes: 0 certified optimum, 2 converged but not certified, 1 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import extremal as E
from . import shooting as Sh
from . import sufficiency as Su
from .dynamics import CrtbpParams, EngineParams, State
from .errors import L1CrtbpError, ParseError, ScenarioError, ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("l1crtbp")

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_CERT = 2


# ------------------------------------------------------------- scenario


@dataclass(frozen=True)
class Constants:
    d_star_km: float
    mu: float | None = None
    m_star_kg: float | None = None
    m1_kg: float | None = None
    m2_kg: float | None = None
    t_star_s: float | None = None
    r_body1_km: float = 1e-6
    r_body2_km: float = 1e-6


@dataclass(frozen=True)
class Engine:
    m0_kg: float
    thrust_n: float | None = None
    tau_max: float | None = None
    beta: float | None = None
    isp_s: float | None = None
    m_dry_kg: float = 1e-3


@dataclass(frozen=True)
class InitialOrbit:
    radius_km: float
    frame: str = "inertial"


@dataclass(frozen=True)
class Target:
    kind: str
    radius_km: float
    frame: str = "rotating"
    center: str = "primary2"


@dataclass(frozen=True)
class Homotopy:
    method: str = "arclength"
    lambda_grid: tuple = (0.0, 1.0)
    seed: str = "primer"
    seed_magnitude: float = 0.9
    seed_coupling: float = 0.9
    min_step: float = 1e-4
    end_gap: float = 1e-9
    seed_iter: int = 30


@dataclass(frozen=True)
class Tolerances:
    rtol: float = 1e-14
    atol: float = 1e-14
    shooting: float = 1e-10
    smooth: float = 1e-8
    corrector: float = 1e-6
    precise: bool = True
    jacobian: str = "variational"
    max_iter: int = 30


@dataclass(frozen=True)
class Output:
    dir: str = "out"
    jcurve: bool = False
    epsilon: float = 1e-3
    n_points: int = 21


@dataclass(frozen=True)
class Scenario:
    name: str
    constants: Constants
    engine: Engine
    initial_orbit: InitialOrbit
    target: Target
    t_f: float
    homotopy: Homotopy = Homotopy()
    tolerances: Tolerances = Tolerances()
    output: Output = Output()
    reduced: bool = True

    def to_dict(self):
        d = asdict(self)
        d["homotopy"]["lambda_grid"] = list(self.homotopy.lambda_grid)
        return d


_SECTIONS = {
    "constants": Constants,
    "engine": Engine,
    "initial_orbit": InitialOrbit,
    "target": Target,
    "homotopy": Homotopy,
    "tolerances": Tolerances,
    "output": Output,
}
_TOP = {"name", "t_f", "reduced", "schema_version", *_SECTIONS}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ValidationError(path, "expected a table")
    names = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ValidationError(f"{path}.{sorted(unknown)[0]}", "unknown key")
    kwargs = {}
    for name, f in names.items():
        if name in data:
            val = data[name]
            if name == "lambda_grid":
                if not isinstance(val, (list, tuple)) or not all(isinstance(x, (int, float)) for x in val):
                    raise ValidationError(f"{path}.{name}", "expected a list of numbers")
                val = tuple(float(x) for x in val)
            kwargs[name] = val
        elif f.default is MISSING:
            raise ValidationError(f"{path}.{name}", "missing required field")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(path, str(exc)) from exc


def _positive(value, path, allow_zero=False):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not np.isfinite(value):
        raise ValidationError(path, "expected a number")
    if value < 0 or (value == 0 and not allow_zero):
        raise ValidationError(path, "must be positive")


def validate_scenario(data) -> Scenario:
    if not isinstance(data, dict):
        raise ValidationError("<root>", "expected a table")
    unknown = set(data) - _TOP
    if unknown:
        raise ValidationError(sorted(unknown)[0], "unknown key")
    sv = data.get("schema_version", SCHEMA_VERSION)
    if sv != SCHEMA_VERSION:
        raise ValidationError("schema_version", f"unsupported version {sv}")
    for key in ("t_f", "constants", "engine", "initial_orbit", "target"):
        if key not in data:
            raise ValidationError(key, "missing required field")
    parts = {k: _build(cls, data[k], k) for k, cls in _SECTIONS.items() if k in data}
    t_f = data["t_f"]
    _positive(t_f, "t_f")
    c, e, io, tg = parts["constants"], parts["engine"], parts["initial_orbit"], parts["target"]
    _positive(c.d_star_km, "constants.d_star_km")
    if (c.mu is None) == (c.m1_kg is None or c.m2_kg is None):
        raise ValidationError("constants.mu", "give either mu or both m1_kg and m2_kg")
    if c.mu is not None and not (isinstance(c.mu, (int, float)) and 0.0 <= c.mu < 0.5):
        raise ValidationError("constants.mu", "must lie in [0, 0.5)")
    if c.m1_kg is not None:
        _positive(c.m1_kg, "constants.m1_kg")
        _positive(c.m2_kg, "constants.m2_kg", allow_zero=True)
    elif c.m_star_kg is None:
        raise ValidationError("constants.m_star_kg", "missing required field")
    for name in ("m_star_kg", "t_star_s", "r_body1_km", "r_body2_km"):
        v = getattr(c, name)
        if v is not None:
            _positive(v, f"constants.{name}")
    _positive(e.m0_kg, "engine.m0_kg")
    if (e.thrust_n is None) == (e.tau_max is None):
        raise ValidationError("engine.thrust_n", "give exactly one of thrust_n, tau_max")
    _positive(e.thrust_n if e.thrust_n is not None else e.tau_max, "engine.thrust_n" if e.thrust_n is not None else "engine.tau_max")
    if (e.beta is None) == (e.isp_s is None):
        raise ValidationError("engine.beta", "give exactly one of beta, isp_s")
    if e.beta is not None:
        _positive(e.beta, "engine.beta", allow_zero=True)
    else:
        _positive(e.isp_s, "engine.isp_s")
    _positive(e.m_dry_kg, "engine.m_dry_kg")
    _positive(io.radius_km, "initial_orbit.radius_km")
    if io.frame not in ("inertial", "rotating"):
        raise ValidationError("initial_orbit.frame", "must be 'inertial' or 'rotating'")
    if tg.kind not in ("moon_circular", "circular"):
        raise ValidationError("target.kind", "must be 'moon_circular' or 'circular'")
    _positive(tg.radius_km, "target.radius_km")
    if tg.frame not in ("inertial", "rotating"):
        raise ValidationError("target.frame", "must be 'inertial' or 'rotating'")
    if tg.center not in ("primary1", "primary2"):
        raise ValidationError("target.center", "must be 'primary1' or 'primary2'")
    h = parts.get("homotopy", Homotopy())
    if h.method not in ("arclength", "natural"):
        raise ValidationError("homotopy.method", "must be 'arclength' or 'natural'")
    if h.seed not in ("primer", "velocity", "radial"):
        raise ValidationError("homotopy.seed", "must be primer, velocity or radial")
    g = h.lambda_grid
    if len(g) < 2 or g[0] != 0.0 or g[-1] != 1.0 or any(b <= a for a, b in zip(g, g[1:])):
        raise ValidationError("homotopy.lambda_grid", "must increase strictly from 0 to 1")
    tol = parts.get("tolerances", Tolerances())
    for name in ("rtol", "atol", "shooting", "smooth", "corrector"):
        _positive(getattr(tol, name), f"tolerances.{name}")
    if tol.jacobian not in ("auto", "fd", "variational"):
        raise ValidationError("tolerances.jacobian", "must be auto, fd or variational")
    out = parts.get("output", Output())
    _positive(out.epsilon, "output.epsilon")
    reduced = data.get("reduced", True)
    if not isinstance(reduced, bool):
        raise ValidationError("reduced", "expected a boolean")
    name = data.get("name", "scenario")
    return Scenario(name, c, e, io, tg, float(t_f), h, tol, out, reduced)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(raw.decode("utf-8"))
        elif path.suffix.lower() == ".toml":
            data = tomllib.loads(raw.decode("utf-8"))
        else:
            raise ParseError(f"{path}: unknown extension (expected .toml or .json)")
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return validate_scenario(data)


def bundled_scenario(name="ems_l1.toml"):
    return resources.files("l1crtbp").joinpath("scenarios", name)


# ------------------------------------------------------ problem assembly


def build_params(s: Scenario):
    c, e = s.constants, s.engine
    if c.mu is not None:
        mu, m_star = float(c.mu), c.m_star_kg
    else:
        m_star = c.m1_kg + c.m2_kg
        mu = c.m2_kg / m_star
    if c.t_star_s is not None:
        prm = CrtbpParams(mu, c.d_star_km, c.t_star_s, m_star, c.r_body1_km / c.d_star_km, c.r_body2_km / c.d_star_km, e.m_dry_kg / m_star)
    else:
        prm = CrtbpParams.from_physical(mu, c.d_star_km, m_star, c.r_body1_km, c.r_body2_km, e.m_dry_kg)
    if e.thrust_n is not None:
        eng = EngineParams.from_physical(e.thrust_n, e.m0_kg, prm, isp_s=e.isp_s, beta=e.beta)
    else:
        beta = e.beta if e.beta is not None else prm.v_star * 1e3 / (9.80665 * e.isp_s)
        eng = EngineParams(float(e.tau_max), float(beta), e.m0_kg / m_star)
    return prm, eng


def build_problem(s: Scenario, lam=0.0):
    prm, eng = build_params(s)
    d = s.constants.d_star_km
    R = s.initial_orbit.radius_km / d
    vc = np.sqrt((1.0 - prm.mu) / R)
    v0 = vc - R if s.initial_orbit.frame == "inertial" else vc
    x0 = State(prm.r1 + np.array([R, 0.0, 0.0]), [0.0, v0, 0.0], eng.m0)
    n = 6 if (s.reduced and eng.beta == 0.0) else 7
    r_t = s.target.radius_km / d
    if s.target.kind == "moon_circular":
        tgt = Sh.moon_circular_target(prm, r_t, n, s.target.frame)
    else:
        center = prm.r1 if s.target.center == "primary1" else prm.r2
        gm = (1.0 - prm.mu) if s.target.center == "primary1" else prm.mu
        vt = np.sqrt(gm / r_t)
        speed = abs(vt - r_t) if s.target.frame == "inertial" else vt
        tgt = Sh.circular_orbit_target(center, r_t, speed, n)
    return Sh.ShootingProblem(x0, prm.from_days(s.t_f), tgt, eng, prm, lam)


def shooting_options(s: Scenario):
    t = s.tolerances
    fo = E.FlowOptions(rtol=t.rtol, atol=t.atol, control_sensitivities=True)
    smooth = Sh.ShootingOptions(tol=t.smooth, max_iter=t.max_iter, jacobian=t.jacobian, flow=fo, globalize=True)
    final = Sh.ShootingOptions(tol=t.shooting, max_iter=t.max_iter, jacobian="variational", flow=fo, precise=t.precise)
    return smooth, final


# ----------------------------------------------------------------- report


@dataclass
class RunReport:
    scenario: dict
    convergence: list
    residual: float
    switch_times: list
    arc_modes: list
    n_burn_arcs: int
    n_switches: int
    propellant: float
    sufficiency: dict
    timing: dict
    p0: list
    nu: list
    exit_code: int
    schema_version: int = SCHEMA_VERSION
    artifacts: dict = field(default_factory=dict, repr=False, compare=False)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "artifacts"}
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)} - {"artifacts"}
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError("unsupported report schema")
        return cls(**{k: d[k] for k in names})


def _verdict_dict(v: Su.Verdict):
    return {"status": v.status, "time": v.time, "index": v.index, "note": v.note}


def sufficiency_dict(rep: Su.SufficiencyReport):
    out = {
        "classification": rep.classification,
        "condition1": _verdict_dict(rep.condition1),
        "condition2": _verdict_dict(rep.condition2),
        "condition3": _verdict_dict(rep.condition3),
        "reduced_matrix": np.asarray(rep.reduced_matrix).tolist(),
        "min_eig": rep.min_eig,
        "nu": np.asarray(rep.nu).tolist(),
        "tangent_basis": np.asarray(rep.C).tolist(),
    }
    if rep.j_curve_error:
        out["j_curve_error"] = rep.j_curve_error
    if rep.j_curve is not None:
        out["j_curve"] = {"slope0": rep.j_curve.slope0, "curvature0": rep.j_curve.curvature0, "min_J_nonzero": float(np.min(np.delete(rep.j_curve.J, len(rep.j_curve.J) // 2)))}
    return out


def _exact(a):
    # str of a longdouble round-trips; float repr round-trips too
    a = np.asarray(a)
    return [str(x) if a.dtype == np.longdouble else repr(float(x)) for x in a]


def _unknowns_from_strings(p0, nu):
    conv = lambda xs: np.array([np.longdouble(x) for x in xs], dtype=np.longdouble)  # noqa: E731
    return Sh.ShootingUnknowns(conv(p0), conv(nu))


def _propellant(traj):
    return float(sum(b - a for a, b, m in traj.arc_bounds() if m == E.BURN))


# ------------------------------------------------------------------- run


def solve_scenario(s: Scenario, progress=None):
    """Continuation from the lam = 0 seed to the lam = 1 extremal."""
    smooth, final = shooting_options(s)
    pb = build_problem(s, 0.0)
    timing = {}
    t0 = time.time()
    h = s.homotopy
    if h.seed == "primer":
        guess = Sh.primer_seed(pb, h.seed_magnitude, h.seed_coupling)
    else:
        guess = Sh.coarse_guess(pb, h.seed)
    convergence = []
    if h.method == "natural":
        sols = Sh.continuation(pb, h.lambda_grid, guess, smooth, h.min_step, final_opts=final)
        for so in sols:
            convergence.append({"lam": so.lam, "residual": so.residual_norm, "iterations": so.iterations})
        timing["continuation"] = time.time() - t0
        return sols[-1], convergence, timing
    s0 = Sh.solve_shooting(pb, guess, replace(smooth, max_iter=h.seed_iter))
    convergence.append({"lam": 0.0, "residual": s0.residual_norm, "iterations": s0.iterations})
    timing["lambda0"] = time.time() - t0
    t1 = time.time()
    aopts = Sh.ArclengthOptions(accept=s.tolerances.corrector, end_gap=h.end_gap)
    end = Sh.arclength_continuation(pb, s0, smooth, aopts, callback=progress)
    convergence.append({"lam": end.lam, "residual": end.residual_norm, "iterations": 0})
    timing["arclength"] = time.time() - t1
    t2 = time.time()
    sol = Sh.solve_shooting(pb.with_lambda(1.0), end.unknowns, final)
    convergence.append({"lam": 1.0, "residual": sol.residual_norm, "iterations": sol.iterations})
    timing["lambda1"] = time.time() - t2
    return sol, convergence, timing


def run(s: Scenario, outdir=None, jcurve=None, progress=None, write=True):
    """Solve, certify and (optionally) write artifacts; returns the report."""
    outdir = Path(outdir if outdir is not None else s.output.dir)
    jcurve = s.output.jcurve if jcurve is None else jcurve
    sol, convergence, timing = solve_scenario(s, progress)
    t0 = time.time()
    rep = Su.certify(sol, jcurve=jcurve, epsilon=s.output.epsilon, n_points=s.output.n_points)
    timing["certify"] = time.time() - t0
    code = EXIT_OK if rep.classification == Su.STRICT_OPTIMUM else EXIT_CERT
    tr = sol.trajectory
    report = RunReport(
        scenario=s.to_dict(),
        convergence=convergence,
        residual=sol.residual_norm,
        switch_times=[float(x) for x in tr.switch_times],
        arc_modes=[int(m) for m in tr.arc_modes],
        n_burn_arcs=tr.n_burn_arcs,
        n_switches=tr.n_switches,
        propellant=_propellant(tr),
        sufficiency=sufficiency_dict(rep),
        timing=timing,
        p0=_exact(sol.unknowns.p0),
        nu=_exact(sol.unknowns.nu),
        exit_code=code,
    )
    report.artifacts = {"solution": sol, "sufficiency": rep}
    if write:
        write_artifacts(report, outdir)
    return report


def write_artifacts(report: RunReport, outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sol = report.artifacts["solution"]
    (outdir / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    extremal = {"schema_version": SCHEMA_VERSION, "scenario": report.scenario, "lam": 1.0, "p0": report.p0, "nu": report.nu, "residual": report.residual}
    (outdir / "extremal.json").write_text(json.dumps(extremal, indent=2))
    write_trajectory_csv(sol, outdir / "trajectory.csv")
    emit_plot_data(report, outdir)


def trajectory_rows(sol):
    tr = sol.trajectory
    pb = sol.problem
    eng = pb.engine
    H = E.hamiltonian_along(tr, eng, pb.params)
    rows = []
    for i, z in enumerate(tr.z):
        mode = tr.arc_modes[tr.sample_arc[i]]
        rho = 1.0 if mode == E.BURN else 0.0
        pv = z[10:13]
        nv = np.linalg.norm(pv)
        w = pv / nv if nv > 0 else np.zeros(3)
        h1 = eng.tau_max * nv / z[6] - eng.tau_max * eng.beta * z[13] - 1.0
        rows.append([tr.t[i], *z[0:7], rho, *w, h1, H[i]])
    return rows


def write_trajectory_csv(sol, path):
    header = ["t", "x", "y", "z", "vx", "vy", "vz", "m", "rho", "wx", "wy", "wz", "H1", "H"]
    _write_csv(path, header, trajectory_rows(sol))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if not isinstance(x, str) else x for x in r])


def scaled_delta(d):
    """sgn(d) |d|^(1/12)."""
    d = np.asarray(d, dtype=float)
    return np.sign(d) * np.abs(d) ** (1.0 / 12.0)


def emit_plot_data(report: RunReport, outdir):
    """Columnar files behind the trajectory, control, determinant and J-curve plots."""
    if not report.artifacts or "solution" not in report.artifacts:
        raise ValueError("empty report: nothing to emit")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sol = report.artifacts["solution"]
    rep = report.artifacts.get("sufficiency")
    tr = sol.trajectory
    eng = sol.problem.engine
    written = []
    rows = []
    for i, z in enumerate(tr.z):
        k = int(tr.sample_arc[i])
        rows.append([tr.t[i], z[0], z[1], 1 if tr.arc_modes[k] == E.BURN else 0, k])
    _write_csv(outdir / "xy_trajectory.csv", ["t", "x", "y", "burn", "arc"], rows)
    written.append("xy_trajectory.csv")
    rows = []
    for i, z in enumerate(tr.z):
        nv = np.linalg.norm(z[10:13])
        rho = 1.0 if tr.arc_modes[tr.sample_arc[i]] == E.BURN else 0.0
        rows.append([tr.t[i], rho, nv, eng.tau_max * nv / z[6] - eng.tau_max * eng.beta * z[13] - 1.0])
    _write_csv(outdir / "control_profile.csv", ["t", "rho", "pv_norm", "H1"], rows)
    written.append("control_profile.csv")
    if rep is not None and rep.trace is not None:
        tc = rep.trace
        rows = [[t, d, s, "sample", int(a)] for t, d, s, a in zip(tc.t, tc.delta, scaled_delta(tc.delta), tc.arc)]
        for i, (dm, dp) in enumerate(tc.switch_pairs):
            ts = tc.switch_times[i]
            rows.append([ts, dm, float(scaled_delta(dm)), "switch_minus", i])
            rows.append([ts, dp, float(scaled_delta(dp)), "switch_plus", i + 1])
        _write_csv(outdir / "delta_trace.csv", ["t", "delta", "scaled", "kind", "arc"], rows)
        written.append("delta_trace.csv")
        if rep.j_curve is not None:
            jc = rep.j_curve
            rows = [[x, j, *e[0:3]] for x, j, e in zip(jc.xi, jc.J, jc.endpoints)]
            _write_csv(outdir / "j_curve.csv", ["xi", "J", "x", "y", "z"], rows)
            written.append("j_curve.csv")
    return written


# --------------------------------------------------------------- certify


def load_extremal(path):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError("schema_version", "unsupported extremal file")
    s = validate_scenario(_scenario_from_dict(d["scenario"]))
    return s, _unknowns_from_strings(d["p0"], d["nu"])


def bundled_extremal(name="ems_l1_extremal.json"):
    """Packaged converged extremal: (scenario, unknowns)."""
    with resources.as_file(resources.files("l1crtbp").joinpath("data", name)) as path:
        return load_extremal(path)


def _scenario_from_dict(d):
    d = dict(d)
    out = {k: v for k, v in d.items() if k in _TOP}
    for sec in _SECTIONS:
        if sec in out and isinstance(out[sec], dict):
            out[sec] = {k: v for k, v in out[sec].items() if v is not None}
    return out


def certify_extremal(s: Scenario, unknowns: Sh.ShootingUnknowns, jcurve=False):
    pb = build_problem(s, 1.0)
    _, final = shooting_options(s)
    S = Sh.shooting_residual(pb, unknowns, final, precise=final.precise)
    p0 = np.asarray(unknowns.p0, dtype=float)
    traj = E.flow(pb.z0(p0), pb.t_f, 1.0, pb.engine, pb.params, final.flow)
    sol = Sh.ShootingSolution(unknowns, traj, np.asarray(S), 1.0, problem=pb, flow_options=final.flow)
    rep = Su.certify(sol, jcurve=jcurve, epsilon=s.output.epsilon, n_points=s.output.n_points)
    return sol, rep


# ---------------------------------------------------------------- main


def _grid(text):
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad lambda grid {text!r}") from exc


def make_parser():
    p = argparse.ArgumentParser(prog="l1crtbp", description="L1-minimal low-thrust transfers in the CRTBP")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="run continuation and certification for a scenario")
    s.add_argument("scenario")
    s.add_argument("--out", default=None)
    s.add_argument("--jcurve", action="store_true")
    s.add_argument("--lambda-grid", type=_grid, default=None, help="comma separated, switches to natural continuation")
    s.add_argument("--tol-shooting", type=float, default=None)
    s.add_argument("--tol-rtol", type=float, default=None)
    s.add_argument("--tol-atol", type=float, default=None)
    s.add_argument("--tol-corrector", type=float, default=None)
    s.add_argument("--no-precise", action="store_true", help="float64 residual at lam = 1")
    c = sub.add_parser("certify", help="re-run certification on a stored extremal")
    c.add_argument("extremal")
    c.add_argument("--jcurve", action="store_true")
    return p


def _override(s: Scenario, a):
    tol = s.tolerances
    upd = {}
    for flag, key in (("tol_shooting", "shooting"), ("tol_rtol", "rtol"), ("tol_atol", "atol"), ("tol_corrector", "corrector")):
        if getattr(a, flag) is not None:
            upd[key] = getattr(a, flag)
    if a.no_precise:
        upd["precise"] = False
    s = replace(s, tolerances=replace(tol, **upd))
    if a.lambda_grid is not None:
        data = s.to_dict()
        data["homotopy"]["lambda_grid"] = list(a.lambda_grid)
        data["homotopy"]["method"] = "natural"
        s = validate_scenario(_scenario_from_dict(data))
    return s


def _print_summary(report: RunReport, out):
    suf = report.sufficiency
    print(f"burn arcs {report.n_burn_arcs}, switches {report.n_switches}, residual {report.residual:.3e}", file=out)
    for key in ("condition1", "condition2", "condition3"):
        v = suf[key]
        print(f"{key}: {v['status']} {v['note']}".rstrip(), file=out)
    if suf.get("reduced_matrix"):
        print(f"reduced quadratic form: {np.asarray(suf['reduced_matrix']).ravel().tolist()}", file=out)
    print(f"classification: {suf['classification']}", file=out)


def main(argv=None):
    a = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(message)s")
    if a.command == "solve":
        try:
            s = _override(load_scenario(a.scenario), a)
        except ScenarioError as exc:
            print(f"scenario error: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        try:
            report = run(s, a.out, a.jcurve or None)
        except L1CrtbpError as exc:
            print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        _print_summary(report, sys.stdout)
        return report.exit_code
    try:
        s, unknowns = load_extremal(a.extremal)
        sol, rep = certify_extremal(s, unknowns, a.jcurve)
    except (ScenarioError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"cannot load extremal: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except L1CrtbpError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"residual {float(np.max(np.abs(sol.residual))):.3e}, burn arcs {sol.trajectory.n_burn_arcs}, switches {sol.trajectory.n_switches}")
    print(f"classification: {rep.classification}")
    return EXIT_OK if rep.classification == Su.STRICT_OPTIMUM else EXIT_CERT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
