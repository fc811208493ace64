"""Steady incompressible Navier-Stokes on the five-subdomain partition.

Taylor-Hood (P2 velocity / P1 pressure) blocks per subdomain, coupled by
two multiplier sets per interface (one per velocity component, sharing a
single Fourier frequency set).  The nonlinear system is solved by
Newton's method started from the solution of the Stokes problem.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import saddle
from .fem import (DirichletSet, FunctionSpace, assemble_boundary_load,
                  assemble_load, assemble_ns_blocks, assemble_stiffness,
                  eval_function)
from .mesh import NS_INTERFACE_SEGMENTS, NS_INTERFACE_SIDES, ns_mesh_family
from .multiplier import FourierBasis, cached_ortho_map
from .saddle import InterfaceSpec, PartitionGraph, Subdomain

__all__ = [
    "NSProblem",
    "NewtonDivergedError",
    "EddyReport",
    "DEFAULT_EDDY_BOXES",
    "REFERENCE_EDDY_CENTERS",
    "CAVITY_N_GAMMA",
    "MANUFACTURED_N_GAMMA",
    "five_domain_problem",
    "manufactured_case",
    "cavity_case",
    "pressure_pin",
    "newton_solve",
    "find_eddies",
    "ns_exact_velocity",
    "ns_exact_velocity_gradient",
    "ns_exact_pressure",
    "ns_forcing",
    "ns_neumann",
]

MANUFACTURED_N_GAMMA = (22, 18, 18, 14)
CAVITY_N_GAMMA = (42, 18, 18, 14)

# reference eddy centers of the fine cavity solution (primary, bottom
# right, bottom left)
REFERENCE_EDDY_CENTERS = {
    "E1": (0.545907, 0.593810),
    "E2": (0.879935, 0.121555),
    "E3": (0.059761, 0.053354),
}
DEFAULT_EDDY_BOXES = {
    "E1": (0.30, 0.80, 0.30, 0.80),
    "E2": (0.75, 1.00, 0.00, 0.25),
    "E3": (0.00, 0.25, 0.00, 0.25),
}


class NewtonDivergedError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


# manufactured solution u = (sin(pi y), exp(x)), p = -x^2/2 (divergence free)
def ns_exact_velocity(x, y):
    return (math.sin(math.pi * y), math.exp(x))


def ns_exact_velocity_gradient(x, y):
    return np.array([[0.0, math.pi * math.cos(math.pi * y)],
                     [math.exp(x), 0.0]])


def ns_exact_pressure(x, y):
    return -0.5 * x * x


def ns_forcing(x, y, mu=1.0):
    f1 = mu * np.pi**2 * np.sin(np.pi * y) + np.exp(x) * np.pi * np.cos(np.pi * y) - x
    f2 = (np.sin(np.pi * y) - mu) * np.exp(x)
    return np.stack([f1, f2]) if np.ndim(x) else (float(f1), float(f2))


def ns_neumann(x, y, mu=1.0):
    # sigma(u, p) n on the outflow side x = 1 with n = (1, 0)
    return (0.5 * x * x, mu * math.exp(x))


class NSProblem:
    """Five-subdomain Navier-Stokes problem bound to one mesh family."""

    def __init__(self, h, mu, forcing, dirichlet, neumann, neumann_side,
                 n_gamma, lid_speed=None, q=4, n_samples=2000):
        self.h = h
        self.mu = float(mu)
        self.forcing = forcing
        self.dirichlet = dirichlet
        self.neumann = neumann
        self.lid_speed = lid_speed
        self.q = q
        self.n_gamma = tuple(n_gamma)
        self.pin = None

        self.meshes = ns_mesh_family(h)
        self.velocity = [FunctionSpace(m, "P2", components=2) for m in self.meshes]
        self.pressure = [FunctionSpace(m, "P1") for m in self.meshes]

        self.dirichlet_tags, self.neumann_tags = [], []
        for mesh in self.meshes:
            dtags, ntags = [], []
            for tag in mesh.boundary_tags():
                if tag.startswith("interface:"):
                    continue
                mids = [0.5 * (mesh.vertices[a] + mesh.vertices[b])
                        for (a, b) in mesh.edges_with_tag(tag)]
                mid = mids[0]
                if neumann_side is not None and neumann_side(mid[0], mid[1]):
                    ntags.append(tag)
                else:
                    dtags.append(tag)
            self.dirichlet_tags.append(dtags)
            self.neumann_tags.append(ntags)
        if neumann is None and any(self.neumann_tags[i] for i in range(5)):
            raise ValueError("neumann data missing for a neumann side")

        self.interfaces = []
        self.ortho_maps = []
        for k, ((p0, p1), sides, ng) in enumerate(
                zip(NS_INTERFACE_SEGMENTS, NS_INTERFACE_SIDES, self.n_gamma), start=1):
            if ng % 2 != 0 or (ng // 2 - 1) % 2 != 0:
                raise ValueError(
                    f"n_gamma={ng} is not of the form 2*(2*n_omega + 1)")
            n_omega = (ng // 2 - 1) // 2
            L = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
            basis = FourierBasis(L, n_omega)
            self.interfaces.append(
                InterfaceSpec(f"interface:{k}", p0, p1, basis, sides))
            self.ortho_maps.append(cached_ortho_map(basis, n_samples))

        # constant operator pieces per subdomain
        self._stiff = [assemble_stiffness(FunctionSpace(m, "P2")) for m in self.meshes]
        self._load = []
        for i, V in enumerate(self.velocity):
            f = assemble_load(V, self.forcing)
            for tag in self.neumann_tags[i]:
                f += assemble_boundary_load(V, tag, self.neumann, q=6)
            self._load.append(f)

        # mutable Newton state read by the subdomain assemblers
        self._state = {"mode": "stokes", "u": [np.zeros(V.n_dofs)
                                               for V in self.velocity]}
        subs = [Subdomain((self.velocity[i], self.pressure[i]),
                          self._make_assembler(i),
                          coupling_space=self.velocity[i], coupling_offset=0)
                for i in range(5)]
        self.partition = PartitionGraph(subs, self.interfaces)

    def _make_assembler(self, i):
        V, Q = self.velocity[i], self.pressure[i]

        def assemble():
            blocks = assemble_ns_blocks(V, Q, self.mu, self._state["u"][i])
            D = blocks.divergence
            F = blocks.diffusion
            rhs_mom = self._load[i].copy()
            if self._state["mode"] == "newton":
                F = F + blocks.convection_jacobian
                extra = blocks.convection_jacobian - blocks.convection
                rhs_mom += extra @ self._state["u"][i]
            K = sp.bmat([[F, -D.T], [-D, None]], format="csr")
            return K, np.concatenate([rhs_mom, np.zeros(Q.n_scalar)])

        return assemble

    @property
    def reynolds(self):
        if self.lid_speed is None:
            return None
        return self.lid_speed / self.mu

    @property
    def multiplier_dofs(self):
        return sum(self.n_gamma)

    def dirichlet_sets(self):
        out = []
        for i, V in enumerate(self.velocity):
            if self.dirichlet_tags[i]:
                bc = DirichletSet.from_tags(V, self.dirichlet_tags[i], self.dirichlet)
            else:
                bc = DirichletSet(np.empty(0, dtype=np.int64), np.empty(0))
            if self.pin is not None and self.pin[0] == i:
                pin_bc = DirichletSet(np.array([V.n_dofs + self.pin[1]]),
                                      np.array([0.0]))
                bc = DirichletSet.union(bc, pin_bc)
            out.append(bc)
        return out

    def split(self, field, i):
        """Velocity and pressure coefficient vectors of subdomain i."""
        V = self.velocity[i]
        block = field.subdomain_coeffs[i]
        return block[:V.n_dofs], block[V.n_dofs:]


def five_domain_problem(h, mu, forcing, dirichlet, neumann=None,
                        neumann_side=None, n_gamma=MANUFACTURED_N_GAMMA, **kw):
    return NSProblem(h, mu, forcing, dirichlet, neumann, neumann_side,
                     n_gamma, **kw)


def manufactured_case(h, n_gamma=MANUFACTURED_N_GAMMA, mu=1.0, **kw):
    """Convergence benchmark with outflow side x = 1 carrying stress data."""
    return five_domain_problem(
        h, mu,
        forcing=lambda x, y: ns_forcing(x, y, mu),
        dirichlet=ns_exact_velocity,
        neumann=lambda x, y: ns_neumann(x, y, mu),
        neumann_side=lambda x, y: abs(x - 1.0) < 1e-12,
        n_gamma=n_gamma, **kw)


def cavity_case(h, n_gamma=CAVITY_N_GAMMA, lid_speed=500.0, mu=1.0, **kw):
    """Lid-driven cavity at Re = lid_speed / mu with a pinned pressure."""
    def lid(x, y):
        if abs(y - 1.0) < 1e-12 and 0.0 < x < 1.0:
            return (lid_speed, 0.0)
        return (0.0, 0.0)

    problem = five_domain_problem(
        h, mu, forcing=lambda x, y: (0.0, 0.0), dirichlet=lid,
        neumann=None, neumann_side=None, n_gamma=n_gamma,
        lid_speed=lid_speed, **kw)
    pressure_pin(problem)
    return problem


def pressure_pin(problem):
    """Constrain the pressure dof nearest the bottom-left corner to zero.

    Only valid for pure-Dirichlet problems; repeated calls keep the one
    existing constraint.
    """
    if any(problem.neumann_tags[i] for i in range(5)):
        raise ValueError("pressure pin on a problem with a Neumann boundary")
    if problem.pin is not None:
        return problem.pin
    best = None
    for i, Q in enumerate(problem.pressure):
        d2 = np.einsum("ij,ij->i", Q.dof_coords, Q.dof_coords)
        k = int(np.argmin(d2))
        if best is None or d2[k] < best[0]:
            best = (d2[k], i, k)
    problem.pin = (best[1], best[2])
    return problem.pin


def _nonlinear_residual(problem, coeffs, multipliers):
    """Infinity norm of the reduced nonlinear residual (all row groups)."""
    bcs = problem.dirichlet_sets()
    part = problem.partition
    pieces = []
    mult_rows = [np.zeros(part.multiplier_rows(j))
                 for j in range(len(problem.interfaces))]
    for i in range(5):
        V, Q = problem.velocity[i], problem.pressure[i]
        u = coeffs[i][:V.n_dofs]
        p = coeffs[i][V.n_dofs:]
        blocks = assemble_ns_blocks(V, Q, problem.mu, u)
        r_mom = (blocks.diffusion @ u + blocks.convection @ u
                 - blocks.divergence.T @ p - problem._load[i])
        r_div = -(blocks.divergence @ u)
        r = np.concatenate([r_mom, r_div])
        for j, spec in enumerate(problem.interfaces):
            for sub_id, sign in spec.sides:
                if sub_id != i:
                    continue
                B = part.coupling_block(j, i, q=problem.q,
                                        ortho_map=problem.ortho_maps[j])
                r += sign * (B.T @ multipliers[j])
                mult_rows[j] += sign * (B @ coeffs[i])
        mask = np.ones(r.size, dtype=bool)
        mask[bcs[i].indices] = False
        pieces.append(r[mask])
    pieces.extend(mult_rows)
    return max(float(np.abs(p).max()) if p.size else 0.0 for p in pieces)


def newton_solve(problem, tol=1e-8, max_iter=25):
    """Newton iteration from the Stokes initial guess.

    Every entry of the returned log is one linear saddle solve (the
    first is the Stokes problem) with the nonlinear residual measured
    afterwards.  Raises NewtonDivergedError when max_iter Newton steps
    do not reach the tolerance.
    """
    bcs = problem.dirichlet_sets()
    problem._state["mode"] = "stokes"
    problem._state["u"] = [np.zeros(V.n_dofs) for V in problem.velocity]
    system = saddle.build_saddle(problem.partition, bcs, q=problem.q,
                                 ortho_maps=problem.ortho_maps)
    field = saddle.solve(system)
    log = []
    res = _nonlinear_residual(problem, field.subdomain_coeffs, field.multipliers)
    log.append({"iteration": 1, "residual": res, "stage": "stokes"})
    if res <= tol:
        return field, log

    problem._state["mode"] = "newton"
    for k in range(2, max_iter + 2):
        problem._state["u"] = [problem.split(field, i)[0] for i in range(5)]
        system = saddle.build_saddle(problem.partition, bcs, q=problem.q,
                                     ortho_maps=problem.ortho_maps)
        field = saddle.solve(system)
        res = _nonlinear_residual(problem, field.subdomain_coeffs,
                                  field.multipliers)
        log.append({"iteration": k, "residual": res, "stage": "newton"})
        if res <= tol:
            return field, log
    raise NewtonDivergedError(
        f"Newton did not reach {tol:g} in {max_iter} steps; "
        f"history {[e['residual'] for e in log]}", log)


@dataclass(frozen=True)
class EddyEntry:
    label: str
    center: tuple
    speed: float
    on_box_boundary: bool


@dataclass(frozen=True)
class EddyReport:
    entries: tuple

    def center(self, label):
        for e in self.entries:
            if e.label == label:
                return e.center
        raise KeyError(label)


def _speed_on_grid(problem, field, xs, ys):
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    speed = np.full(pts.shape[0], np.inf)
    remaining = np.ones(pts.shape[0], dtype=bool)
    for i, mesh in enumerate(problem.meshes):
        x0, x1, y0, y1 = mesh.rect
        inside = (remaining & (pts[:, 0] >= x0 - 1e-12) & (pts[:, 0] <= x1 + 1e-12)
                  & (pts[:, 1] >= y0 - 1e-12) & (pts[:, 1] <= y1 + 1e-12))
        if not np.any(inside):
            continue
        u, _ = problem.split(field, i)
        vals = eval_function(problem.velocity[i], u, pts[inside])
        speed[inside] = np.hypot(vals[:, 0], vals[:, 1])
        remaining &= ~inside
    return speed.reshape(X.shape)


def find_eddies(problem, field, boxes=None, step=1e-3, wall_margin=0.02):
    """Locate velocity-magnitude minima in labeled search boxes.

    Scans each box on a grid of the given step and refines once around
    the coarse minimum with a ten times finer local grid.  A layer of
    width wall_margin along the cavity walls is excluded: the no-slip
    velocity vanishes toward the walls and the corner eddy cascade would
    otherwise always undercut the stagnation point of the main eddy in
    the box (centers are insensitive to the margin over [0.02, 0.05]).
    A minimum on the scanned boundary is flagged (degenerate, no
    interior eddy).
    """
    boxes = boxes or DEFAULT_EDDY_BOXES
    entries = []
    for label, (x0, x1, y0, y1) in boxes.items():
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"empty search box for {label!r}")
        # keep the scan strictly inside the cavity, away from the walls
        x0, x1 = max(x0, wall_margin), min(x1, 1.0 - wall_margin)
        y0, y1 = max(y0, wall_margin), min(y1, 1.0 - wall_margin)
        nx = max(int(round((x1 - x0) / step)), 2)
        ny = max(int(round((y1 - y0) / step)), 2)
        xs = np.linspace(x0, x1, nx + 1)
        ys = np.linspace(y0, y1, ny + 1)
        S = _speed_on_grid(problem, field, xs, ys)
        i, j = np.unravel_index(np.argmin(S), S.shape)
        # flag when the scanned boundary ties the minimum (no interior eddy)
        edge = np.zeros(S.shape, dtype=bool)
        edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
        tie = S[i, j] + 1e-10 * max(float(S.max()), 1.0)
        on_boundary = bool(S[edge].min() <= tie)
        cx, cy = xs[i], ys[j]
        fine_x = np.linspace(max(cx - step, x0), min(cx + step, x1), 21)
        fine_y = np.linspace(max(cy - step, y0), min(cy + step, y1), 21)
        Sf = _speed_on_grid(problem, field, fine_x, fine_y)
        fi, fj = np.unravel_index(np.argmin(Sf), Sf.shape)
        entries.append(EddyEntry(label, (float(fine_x[fi]), float(fine_y[fj])),
                                 float(Sf[fi, fj]), bool(on_boundary)))
    return EddyReport(tuple(entries))
