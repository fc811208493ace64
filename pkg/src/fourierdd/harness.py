"""Experiment drivers: convergence studies, error norms and reporting.

Studies sweep mesh families and multiplier counts, solve the coupled
systems and emit one CSV row per case.  Every row repeats the full
configuration so it can be reproduced in isolation; reruns with the same
configuration produce byte-identical output.

Config files are flat key-value text, one experiment per file::

    # poisson.cfg
    experiment = poisson
    N = 20, 28, 40, 56, 80
    n_gamma = 3, 13, 21
    degrees = P2, P2
    conforming = true
    q = 4
    ortho = true

Values are integers, fractions (1/16), floats, booleans, bare strings,
or comma-separated lists thereof.
"""

import io
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
import scipy.sparse.linalg as spla

from . import navier_stokes as ns
from . import saddle
from .fem import (DirichletSet, FunctionSpace, _eval_at, _grad_fields,
                  _ref_values, assemble_load, assemble_stiffness,
                  eliminate_dirichlet, eval_gradient, triangle_quadrature)
from .infsup import beta_estimate, build_surrogate
from .mesh import interface_edge_partition, poisson_mesh_pair, structured_rect_mesh
from .multiplier import FourierBasis, cached_ortho_map, multiplier_values
from .saddle import InterfaceSpec, PartitionGraph, Subdomain, condition_estimate

__all__ = [
    "poisson_exact",
    "poisson_exact_gradient",
    "poisson_forcing",
    "PoissonCase",
    "poisson_two_domain",
    "solve_poisson_reference",
    "l2_error",
    "h1_error",
    "broken_h1_error",
    "RunConfig",
    "parse_config",
    "default_config",
    "ConvergenceReport",
    "run_poisson_study",
    "run_quadrature_study",
    "run_infsup_study",
    "run_condition_study",
    "run_ns_study",
    "run_cavity_study",
    "run_lambda_dump",
    "run_experiment",
]


# ---------------------------------------------------------------------------
# manufactured Poisson problem on the unit square (zero on the boundary)

def poisson_exact(x, y):
    g = 1.0 / 3.0 - x * y * y
    return 100.0 * (x - x * x) * (y - y * y) * np.sin(g)


def poisson_exact_gradient(x, y):
    g = 1.0 / 3.0 - x * y * y
    P = x - x * x
    Q = y - y * y
    sg, cg = np.sin(g), np.cos(g)
    ux = 100.0 * Q * ((1.0 - 2.0 * x) * sg - P * y * y * cg)
    uy = 100.0 * P * ((1.0 - 2.0 * y) * sg - 2.0 * Q * x * y * cg)
    return np.stack([ux, uy]) if np.ndim(x) else (float(ux), float(uy))


def poisson_forcing(x, y):
    # minus Laplacian of poisson_exact, derived by hand and guarded by a
    # finite-difference test
    g = 1.0 / 3.0 - x * y * y
    P = x - x * x
    Q = y - y * y
    sg, cg = np.sin(g), np.cos(g)
    uxx = 100.0 * Q * (-2.0 * sg - 2.0 * (1.0 - 2.0 * x) * y * y * cg
                       - P * y**4 * sg)
    uyy = 100.0 * P * (-2.0 * sg - 2.0 * x * y * (3.0 - 5.0 * y) * cg
                       - 4.0 * x * x * y * y * Q * sg)
    return -(uxx + uyy)


# ---------------------------------------------------------------------------
# error norms

def _error_rule(space):
    degree = 1 if space.degree == "P1" else 2
    return triangle_quadrature(degree + 2)


def l2_error(space, coeffs, exact):
    pts, w = _error_rule(space)
    N = _ref_values(space.degree, pts)
    det = np.abs(space._det)
    P = space.physical_points(pts)
    coeffs = np.asarray(coeffs, dtype=float)
    err2 = 0.0
    exv = _eval_at(exact, P[:, :, 0], P[:, :, 1], space.components)
    for c in range(space.components):
        uh = np.einsum("qa,ta->tq", N, coeffs[c * space.n_scalar + space.cell_dofs])
        ex = exv if space.components == 1 else exv[c]
        err2 += np.einsum("q,t,tq->", w, det, (uh - ex) ** 2)
    return math.sqrt(err2)


def h1_error(space, coeffs, exact, exact_grad):
    """Full H1 error (L2 part plus seminorm) on one subdomain."""
    pts, w = _error_rule(space)
    N = _ref_values(space.degree, pts)
    G = _grad_fields(space, pts)
    det = np.abs(space._det)
    P = space.physical_points(pts)
    X, Y = P[:, :, 0], P[:, :, 1]
    coeffs = np.asarray(coeffs, dtype=float)
    exv = _eval_at(exact, X, Y, space.components)
    err2 = 0.0
    for c in range(space.components):
        cc = coeffs[c * space.n_scalar + space.cell_dofs]
        uh = np.einsum("qa,ta->tq", N, cc)
        guh = np.einsum("tqai,ta->tqi", G, cc)
        ex = exv if space.components == 1 else exv[c]
        gex = _exact_gradient_values(exact_grad, X, Y, space.components, c)
        err2 += np.einsum("q,t,tq->", w, det, (uh - ex) ** 2)
        err2 += np.einsum("q,t,tqi->", w, det, (guh - gex) ** 2)
    return math.sqrt(err2)


def _exact_gradient_values(exact_grad, X, Y, components, c):
    """Gradient of component c of the exact solution at grid points."""
    try:
        out = np.asarray(exact_grad(X, Y), dtype=float)
        if components == 1 and out.shape == (2,) + X.shape:
            return np.moveaxis(out, 0, -1)
        if components == 2 and out.shape == (2, 2) + X.shape:
            return np.moveaxis(out[c], 0, -1)
    except Exception:
        pass
    flat = [np.asarray(exact_grad(x, y), dtype=float)
            for x, y in zip(X.ravel(), Y.ravel())]
    arr = np.array(flat)
    if components == 1:
        return arr.reshape(X.shape + (2,))
    return arr[:, c, :].reshape(X.shape + (2,))


def broken_h1_error(spaces, coeff_vectors, exact, exact_grad):
    """Broken norm: sqrt of the sum of squared subdomain H1 errors."""
    per = [h1_error(s, c, exact, exact_grad)
           for s, c in zip(spaces, coeff_vectors)]
    return math.sqrt(sum(e * e for e in per)), per


# ---------------------------------------------------------------------------
# Poisson two-domain driver

@dataclass
class PoissonCase:
    """Assembled two-subdomain Poisson problem, ready to solve."""

    N: int
    conforming: bool
    degrees: tuple
    n_gamma: int
    q: int
    ortho: bool
    meshes: tuple
    spaces: tuple
    basis: FourierBasis
    ortho_map: object
    partition: PartitionGraph
    system: saddle.SaddleSystem

    def solve(self):
        return saddle.solve(self.system)

    @property
    def h(self):
        return 1.0 / self.N

    def errors(self, field):
        return broken_h1_error(self.spaces, field.subdomain_coeffs,
                               poisson_exact, poisson_exact_gradient)


def poisson_two_domain(N, conforming=True, degrees=("P2", "P2"), n_gamma=13,
                       q=4, ortho=True, n_samples=2000):
    """Two-subdomain Poisson problem with a Fourier-coupled interface."""
    if n_gamma % 2 != 1:
        raise ValueError("n_gamma must be odd (1 + 2 per frequency)")
    m1, m2 = poisson_mesh_pair(N, conforming)
    V1 = FunctionSpace(m1, degrees[0])
    V2 = FunctionSpace(m2, degrees[1])
    basis = FourierBasis(1.0, (n_gamma - 1) // 2)
    omap = cached_ortho_map(basis, n_samples) if ortho else None

    subs = [
        Subdomain(V1, lambda: (assemble_stiffness(V1),
                               assemble_load(V1, poisson_forcing))),
        Subdomain(V2, lambda: (assemble_stiffness(V2),
                               assemble_load(V2, poisson_forcing))),
    ]
    spec = InterfaceSpec("interface:0", (0.5, 0.0), (0.5, 1.0), basis,
                         sides=((0, -1), (1, +1)))
    partition = PartitionGraph(subs, [spec])
    bcs = [
        DirichletSet.from_tags(V1, ("left", "bottom", "top")),
        DirichletSet.from_tags(V2, ("right", "bottom", "top")),
    ]
    system = saddle.build_saddle(partition, bcs, q=q, ortho_maps=[omap])
    return PoissonCase(N, conforming, tuple(degrees), n_gamma, q, ortho,
                       (m1, m2), (V1, V2), basis, omap, partition, system)


def solve_poisson_reference(N, degree="P2"):
    """Single-domain solve on the conforming N x N mesh of the unit square."""
    mesh = structured_rect_mesh((0.0, 1.0, 0.0, 1.0), N, N)
    V = FunctionSpace(mesh, degree)
    A = assemble_stiffness(V)
    f = assemble_load(V, poisson_forcing)
    bc = DirichletSet.from_tags(V, ("left", "right", "bottom", "top"))
    A_ff, f_f, free = eliminate_dirichlet(A, f, bc)
    u = np.zeros(V.n_dofs)
    u[free] = spla.spsolve(A_ff.tocsc(), f_f)
    return V, u


def poisson_infsup(N, n_gamma, degree="P2", conforming=True, q=4, ortho=True,
                   n_samples=2000):
    """Surrogate inf-sup constant of the two-domain Poisson coupling."""
    m1, m2 = poisson_mesh_pair(N, conforming)
    basis = FourierBasis(1.0, (n_gamma - 1) // 2)
    omap = cached_ortho_map(basis, n_samples) if ortho else None
    sides = []
    for m in (m1, m2):
        space = FunctionSpace(m, degree)
        part = interface_edge_partition(m, "interface:0")
        sides.append((space, part, 0.0))
    problem = build_surrogate(basis, sides, q=q, ortho_map=omap)
    return beta_estimate(problem)


# ---------------------------------------------------------------------------
# run configuration and reports

@dataclass
class RunConfig:
    """Sweep parameters of one experiment."""

    experiment: str
    N: tuple = ()
    h: tuple = ()
    n_gamma: tuple = ()
    degrees: tuple = ("P2", "P2")
    conforming: bool = True
    q: int = 4
    ortho: bool = True
    full_scale: bool = False
    n_samples: int = 2000

    def __post_init__(self):
        if not self.N and not self.h:
            raise ValueError("config needs a nonempty N or h list")
        if self.experiment not in _STUDIES:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        for d in self.degrees:
            if d not in ("P1", "P2"):
                raise ValueError(f"unknown degree {d!r}")


_DEFAULTS = {
    "poisson": dict(N=(20, 28, 40, 56, 80), n_gamma=(3, 13, 21)),
    "poisson-mixed": dict(N=(20, 28, 40, 56, 80), n_gamma=(13,),
                          degrees=("P1", "P2"), conforming=False),
    "quadrature": dict(N=(20, 28, 40), n_gamma=(3, 5, 9, 13, 17, 21),
                       conforming=False),
    "infsup": dict(N=(20, 40, 80), n_gamma=(3, 5, 7, 9, 13, 17, 21, 25, 31)),
    "condition": dict(N=(20,), n_gamma=(3, 5, 9, 13, 17, 21)),
    "ns-manufactured": dict(h=(Fraction(1, 8), Fraction(1, 16), Fraction(1, 32)),
                            n_gamma=ns.MANUFACTURED_N_GAMMA),
    "cavity": dict(h=(Fraction(1, 16), Fraction(1, 32)),
                   n_gamma=ns.CAVITY_N_GAMMA),
    "dump-lambda": dict(N=(80,), n_gamma=(13,)),
}


def default_config(experiment, **overrides):
    if experiment not in _DEFAULTS:
        raise ValueError(f"unknown experiment {experiment!r}")
    kw = dict(_DEFAULTS[experiment])
    kw.update(overrides)
    return RunConfig(experiment=experiment, **kw)


def _parse_value(text):
    text = text.strip()
    if "," in text:
        return tuple(_parse_value(t) for t in text.split(",") if t.strip())
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if "/" in text:
        try:
            return Fraction(text)
        except ValueError:
            pass
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def parse_config(text):
    """Parse flat key-value config text into a dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = _parse_value(value)
    return out


def config_from_mapping(mapping):
    mapping = dict(mapping)
    experiment = mapping.pop("experiment", None)
    if experiment is None:
        raise ValueError("config is missing 'experiment'")
    tuple_keys = ("N", "h", "n_gamma", "degrees")
    for key in tuple_keys:
        if key in mapping and not isinstance(mapping[key], tuple):
            mapping[key] = (mapping[key],)
    return default_config(experiment, **mapping)


class ConvergenceReport:
    """Ordered rows of one study with CSV and JSON emission."""

    def __init__(self, columns):
        self.columns = list(columns)
        self.rows = []

    def add(self, **row):
        self.rows.append({c: row.get(c, "") for c in self.columns})

    @staticmethod
    def _fmt(value):
        if isinstance(value, float):
            return f"{value:.17g}"
        if isinstance(value, Fraction):
            return f"{value.numerator}/{value.denominator}"
        return str(value)

    def to_csv(self, stream):
        stream.write(",".join(self.columns) + "\n")
        for row in self.rows:
            stream.write(",".join(self._fmt(row[c]) for c in self.columns) + "\n")

    def to_json(self, stream):
        payload = [{c: (self._fmt(r[c]) if isinstance(r[c], Fraction) else r[c])
                    for c in self.columns} for r in self.rows]
        json.dump(payload, stream, indent=2)
        stream.write("\n")

    def csv_text(self):
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    def column(self, name, where=None):
        vals = []
        for r in self.rows:
            if where is None or all(r.get(k) == v for k, v in where.items()):
                vals.append(r[name])
        return vals


def _observed_order(prev, cur):
    if not prev or prev.get("error") or cur.get("error"):
        return ""
    e1, e2 = prev["error_broken"], cur["error_broken"]
    h1, h2 = prev["h"], cur["h"]
    if not e1 or not e2:
        return ""
    return math.log(e1 / e2) / math.log(h1 / h2)


# ---------------------------------------------------------------------------
# studies

_POISSON_COLUMNS = [
    "experiment", "N", "h", "n_gamma", "deg1", "deg2", "conforming", "q",
    "ortho", "error_broken", "error_omega1", "error_omega2", "order",
    "solver_residual", "error",
]


def run_poisson_study(config, reference=True):
    """Mesh-size sweep of the coupled Poisson problem per n_gamma.

    Also records the single-domain reference errors (rows with
    n_gamma = "ref") used as the dashed baseline in the plots.
    """
    rep = ConvergenceReport(_POISSON_COLUMNS)
    for ng in config.n_gamma:
        prev = None
        for N in config.N:
            row = dict(experiment=config.experiment, N=N, h=1.0 / N, n_gamma=ng,
                       deg1=config.degrees[0], deg2=config.degrees[1],
                       conforming=config.conforming, q=config.q,
                       ortho=config.ortho)
            try:
                case = poisson_two_domain(
                    N, conforming=config.conforming, degrees=config.degrees,
                    n_gamma=ng, q=config.q, ortho=config.ortho,
                    n_samples=config.n_samples)
                fld = case.solve()
                total, per = case.errors(fld)
                row.update(error_broken=total, error_omega1=per[0],
                           error_omega2=per[1], solver_residual=fld.residual)
                row["order"] = _observed_order(prev, row)
                prev = row
            except Exception as exc:   # keep sweeping on per-row failures
                row["error"] = f"{type(exc).__name__}: {exc}"
                prev = None
            rep.add(**row)
    if reference:
        for degree in sorted(set(config.degrees)):
            prev = None
            for N in config.N:
                V, u = solve_poisson_reference(N, degree)
                err = h1_error(V, u, poisson_exact, poisson_exact_gradient)
                row = dict(experiment=config.experiment, N=N, h=1.0 / N,
                           n_gamma="ref", deg1=degree, deg2=degree,
                           conforming=True, q=config.q, ortho=config.ortho,
                           error_broken=err)
                row["order"] = _observed_order(prev, row)
                prev = row
                rep.add(**row)
    return rep


def run_quadrature_study(config):
    """Error versus n_gamma for 2-node and 4-node interface quadrature."""
    rep = ConvergenceReport(_POISSON_COLUMNS)
    for q in (2, 4):
        for N in config.N:
            for ng in config.n_gamma:
                row = dict(experiment=config.experiment, N=N, h=1.0 / N,
                           n_gamma=ng, deg1=config.degrees[0],
                           deg2=config.degrees[1], conforming=config.conforming,
                           q=q, ortho=config.ortho)
                try:
                    case = poisson_two_domain(
                        N, conforming=config.conforming, degrees=config.degrees,
                        n_gamma=ng, q=q, ortho=config.ortho,
                        n_samples=config.n_samples)
                    fld = case.solve()
                    total, per = case.errors(fld)
                    row.update(error_broken=total, error_omega1=per[0],
                               error_omega2=per[1], solver_residual=fld.residual)
                except Exception as exc:
                    row["error"] = f"{type(exc).__name__}: {exc}"
                rep.add(**row)
    return rep


def run_infsup_study(config):
    rep = ConvergenceReport(["experiment", "N", "h", "n_gamma", "degree",
                             "conforming", "ortho", "beta", "error"])
    for N in config.N:
        for ng in config.n_gamma:
            row = dict(experiment="infsup", N=N, h=1.0 / N, n_gamma=ng,
                       degree=config.degrees[0], conforming=config.conforming,
                       ortho=config.ortho)
            try:
                row["beta"] = poisson_infsup(
                    N, ng, degree=config.degrees[0], conforming=config.conforming,
                    q=config.q, ortho=config.ortho, n_samples=config.n_samples)
            except Exception as exc:
                row["error"] = f"{type(exc).__name__}: {exc}"
            rep.add(**row)
    return rep


def run_condition_study(config):
    """1-norm condition estimates with raw and orthonormalized bases."""
    rep = ConvergenceReport(["experiment", "N", "h", "n_gamma", "ortho",
                             "condition", "error"])
    for ortho in (False, True):
        for N in config.N:
            for ng in config.n_gamma:
                row = dict(experiment="condition", N=N, h=1.0 / N, n_gamma=ng,
                           ortho=ortho)
                try:
                    case = poisson_two_domain(
                        N, conforming=config.conforming, degrees=config.degrees,
                        n_gamma=ng, q=config.q, ortho=ortho,
                        n_samples=config.n_samples)
                    row["condition"] = condition_estimate(case.system)
                except Exception as exc:
                    row["error"] = f"{type(exc).__name__}: {exc}"
                rep.add(**row)
    return rep


def run_ns_study(config):
    """Manufactured Navier-Stokes convergence sweep."""
    rep = ConvergenceReport([
        "experiment", "h", "n_gamma_1", "n_gamma_2", "n_gamma_3", "n_gamma_4",
        "dofs_velocity", "dofs_pressure", "system_size", "error_velocity_h1",
        "error_pressure_l2", "error_combined", "order", "newton_iterations",
        "error",
    ])
    prev = None
    for h in config.h:
        ngs = tuple(config.n_gamma)
        row = dict(experiment="ns-manufactured", h=Fraction(h),
                   n_gamma_1=ngs[0], n_gamma_2=ngs[1], n_gamma_3=ngs[2],
                   n_gamma_4=ngs[3])
        try:
            problem = ns.manufactured_case(h, n_gamma=ngs, q=config.q,
                                           n_samples=config.n_samples)
            fld, log = ns.newton_solve(problem)
            err_u, err_p = ns_errors(problem, fld)
            row.update(dofs_velocity=sum(V.n_dofs for V in problem.velocity),
                       dofs_pressure=sum(Q.n_scalar for Q in problem.pressure),
                       system_size=sum(V.n_dofs for V in problem.velocity)
                       + sum(Q.n_scalar for Q in problem.pressure)
                       + problem.multiplier_dofs,
                       error_velocity_h1=err_u, error_pressure_l2=err_p,
                       error_combined=err_u + err_p,
                       newton_iterations=len(log))
            if prev is not None:
                row["order"] = math.log(prev["error_combined"]
                                        / row["error_combined"]) / math.log(
                    float(prev["h"]) / float(row["h"]))
            prev = row
        except Exception as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
            prev = None
        rep.add(**row)
    return rep


def ns_errors(problem, field):
    """Broken velocity H1 error and pressure L2 error for the exact case."""
    err_u2 = 0.0
    err_p2 = 0.0
    for i in range(5):
        u, p = problem.split(field, i)
        err_u2 += h1_error(problem.velocity[i], u, ns.ns_exact_velocity,
                           ns.ns_exact_velocity_gradient) ** 2
        err_p2 += l2_error(problem.pressure[i], p, ns.ns_exact_pressure) ** 2
    return math.sqrt(err_u2), math.sqrt(err_p2)


def run_cavity_study(config):
    """Lid-driven cavity: Table-style rows with eddy-center errors."""
    hs = list(config.h)
    if config.full_scale:
        hs += [Fraction(1, 64), Fraction(1, 128)]
    rep = ConvergenceReport([
        "experiment", "h", "dofs_velocity", "dofs_pressure", "system_size",
        "E1_err", "E2_err", "E3_err", "E1_x", "E1_y", "E2_x", "E2_y",
        "E3_x", "E3_y", "newton_iterations", "error",
    ])
    for h in hs:
        row = dict(experiment="cavity", h=Fraction(h))
        try:
            problem = ns.cavity_case(h, n_gamma=tuple(config.n_gamma),
                                     q=config.q, n_samples=config.n_samples)
            fld, log = ns.newton_solve(problem)
            report = ns.find_eddies(problem, fld)
            row.update(dofs_velocity=sum(V.n_dofs for V in problem.velocity),
                       dofs_pressure=sum(Q.n_scalar for Q in problem.pressure),
                       system_size=sum(V.n_dofs for V in problem.velocity)
                       + sum(Q.n_scalar for Q in problem.pressure)
                       + problem.multiplier_dofs,
                       newton_iterations=len(log))
            for label, ref in ns.REFERENCE_EDDY_CENTERS.items():
                cx, cy = report.center(label)
                row[f"{label}_x"] = cx
                row[f"{label}_y"] = cy
                row[f"{label}_err"] = math.hypot(cx - ref[0], cy - ref[1])
        except Exception as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rep.add(**row)
    return rep


def run_lambda_dump(config, n_points=200):
    """Sample the reconstructed multiplier and the two one-sided x-derivatives.

    Mirrors the interface plots: lambda approximates the normal
    derivative of the solution across the Poisson interface.
    """
    N = config.N[0]
    ng = config.n_gamma[0]
    case = poisson_two_domain(N, conforming=config.conforming,
                              degrees=config.degrees, n_gamma=ng, q=config.q,
                              ortho=config.ortho, n_samples=config.n_samples)
    fld = case.solve()
    s = np.linspace(0.0, 1.0, n_points)
    lam = multiplier_values(case.basis, fld.multipliers[0], s, case.ortho_map)
    pts = np.column_stack([np.full_like(s, 0.5), s])
    g1 = eval_gradient(case.spaces[0], fld.subdomain_coeffs[0], pts)[:, 0, 0]
    g2 = eval_gradient(case.spaces[1], fld.subdomain_coeffs[1], pts)[:, 0, 0]
    rep = ConvergenceReport(["s", "lambda", "dudx_omega1", "dudx_omega2"])
    for k in range(n_points):
        rep.add(s=float(s[k]), **{"lambda": float(lam[k])},
                dudx_omega1=float(g1[k]), dudx_omega2=float(g2[k]))
    return rep


_STUDIES = {
    "poisson": run_poisson_study,
    "poisson-mixed": run_poisson_study,
    "quadrature": run_quadrature_study,
    "infsup": run_infsup_study,
    "condition": run_condition_study,
    "ns-manufactured": run_ns_study,
    "cavity": run_cavity_study,
    "dump-lambda": run_lambda_dump,
}


def run_experiment(config):
    return _STUDIES[config.experiment](config)
