"""Experiment definitions and drivers: manufactured-solution convergence
studies, circular-convection simulations, and the energy/mass diagnostics.

The manufactured case uses a polynomial-bump order parameter and a cosine
chemical potential with a steady vortex velocity; all derivatives and the
compensating sources are frozen closed forms (hand-differentiated, checked
against finite differences in the tests).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .hdgops import build_blocks
from .mesh import build_structured_mesh
from .polybasis import make_bases
from .stepper import CallableSources, RunConfig, Stepper, state_energy, \
    state_mass


# ---------------------------------------------------------------------------
# cases

@dataclass(frozen=True)
class ManufacturedCase:
    """Exact fields, their derivatives, and the velocity, all vectorized
    callables; sources are derived via sources(pe, eps)."""

    u: callable
    u_t: callable
    grad_u: callable
    lap_u: callable
    phi: callable
    grad_phi: callable
    lap_phi: callable
    beta: callable
    div_beta: callable
    T: float = 0.5

    def sources(self, pe, eps):
        """Compensating source pair (s1, s2) as callables f(x, y, t)."""
        def s1(x, y, t):
            bx, by = self.beta(x, y)
            ux, uy = self.grad_u(x, y, t)
            return (self.u_t(x, y, t) - self.lap_phi(x, y, t) / pe
                    + bx * ux + by * uy)

        def s2(x, y, t):
            u = self.u(x, y, t)
            return (-eps ** 2 * self.lap_u(x, y, t) + u ** 3 - u
                    - self.phi(x, y, t))
        return s1, s2


def vortex_case():
    """Polynomial bump u, cosine phi, vortex velocity on the unit square.

    u = 50 e^-t x^2(x-1)^2 y^2(y-1)^2,  phi = 0.1 sin(t) cos(2pi x) cos(2pi y),
    beta = (sin^2(pi x) sin(pi y) cos(pi y), -sin^2(pi y) sin(pi x) cos(pi x)).
    """
    def X(x):
        return x * x * (x - 1.0) ** 2

    def Xp(x):
        return 4.0 * x ** 3 - 6.0 * x ** 2 + 2.0 * x

    def Xpp(x):
        return 12.0 * x ** 2 - 12.0 * x + 2.0

    def u(x, y, t):
        return 50.0 * np.exp(-t) * X(x) * X(y)

    def u_t(x, y, t):
        return -u(x, y, t)

    def grad_u(x, y, t):
        s = 50.0 * np.exp(-t)
        return s * Xp(x) * X(y), s * X(x) * Xp(y)

    def lap_u(x, y, t):
        s = 50.0 * np.exp(-t)
        return s * (Xpp(x) * X(y) + X(x) * Xpp(y))

    def phi(x, y, t):
        return 0.1 * np.sin(t) * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y)

    def grad_phi(x, y, t):
        s = 0.2 * np.pi * np.sin(t)
        return (-s * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y),
                -s * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y))

    def lap_phi(x, y, t):
        return -8.0 * np.pi ** 2 * phi(x, y, t)

    def beta(x, y):
        return (0.5 * np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y),
                -0.5 * np.sin(np.pi * y) ** 2 * np.sin(2 * np.pi * x))

    def div_beta(x, y):
        return np.zeros_like(np.asarray(x, dtype=float))

    return ManufacturedCase(u=u, u_t=u_t, grad_u=grad_u, lap_u=lap_u,
                            phi=phi, grad_phi=grad_phi, lap_phi=lap_phi,
                            beta=beta, div_beta=div_beta)


def circular_velocity(a=200.0, b=0.1):
    """Rigid-rotation-like field v(r) (2y-1, 1-2x) with a tanh cutoff that
    vanishes (to machine precision) on the boundary of the unit square."""
    def beta(x, y):
        r = np.sqrt((x - 0.5) ** 2 + (y - 0.5) ** 2)
        v = 0.5 * (1.0 + np.tanh(a * (0.5 - b - r)))
        return v * (2.0 * y - 1.0), v * (1.0 - 2.0 * x)
    return beta


def cross_profile(x, y):
    """The +1 cross on a -1 background."""
    inside = (((x >= 0.25) & (x <= 0.75) & (y >= 0.375) & (y <= 0.625))
              | ((x >= 0.375) & (x <= 0.625) & (y >= 0.25) & (y <= 0.75)))
    return np.where(inside, 1.0, -1.0)


@dataclass
class SimulationCase:
    """Circular-convection run: initial datum, velocity and parameters.

    kind 'cross' holds the piecewise +-1 cross; 'disk' holds seeded
    per-cell uniform values in [-1, 1] inside the disk of radius 0.4 and
    -1 outside (realized as per-cell constants, reproducible by seed).
    """

    kind: str
    pe: float
    eps: float
    T: float
    dt: float
    level: int
    seed: int = 0
    snapshot_times: tuple = (0.0, 0.2, 0.7, 1.6)
    beta: callable = field(default_factory=circular_velocity)

    def initial_data(self, mesh):
        if self.kind == "cross":
            return cross_profile
        if self.kind == "disk":
            rng = np.random.default_rng(self.seed)
            centers = mesh.vertices[mesh.cells].mean(axis=1)
            r2 = ((centers[:, 0] - 0.5) ** 2 + (centers[:, 1] - 0.5) ** 2)
            vals = np.full(mesh.num_cells, -1.0)
            inside = r2 <= 0.4 ** 2
            vals[inside] = rng.uniform(-1.0, 1.0, int(inside.sum()))
            return vals
        raise ValueError(f"unknown simulation case kind {self.kind!r}")


def cross_case(reduced=True, level=None, T=None, dt=1e-3, seed=0):
    """Cross-profile circular convection; desk-scale by default, the
    full-size run (T=60, h=0.01-equivalent) behind reduced=False."""
    if reduced:
        lvl = 6 if level is None else level
        horizon = 5.0 if T is None else T
    else:
        lvl = 7 if level is None else level
        horizon = 60.0 if T is None else T
    return SimulationCase(kind="cross", pe=200.0, eps=0.01, T=horizon,
                          dt=dt, level=lvl, seed=seed)


def disk_case(reduced=True, level=None, T=None, dt=1e-3, seed=0):
    """Seeded random-in-disk datum; desk-scale by default (full T=350)."""
    if reduced:
        lvl = 6 if level is None else level
        horizon = 5.0 if T is None else T
    else:
        lvl = 7 if level is None else level
        horizon = 350.0 if T is None else T
    return SimulationCase(kind="disk", pe=200.0, eps=1.0 / 200.0, T=horizon,
                          dt=dt, level=lvl, seed=seed)


# ---------------------------------------------------------------------------
# operations

def manufactured_sources(case, t, pe, eps):
    """Source fields at a fixed time, as callables f(x, y)."""
    s1, s2 = case.sources(pe, eps)
    return (lambda x, y: s1(x, y, t)), (lambda x, y: s2(x, y, t))


def compute_errors(state, case, t, mesh, bases, blocks=None):
    """L2 errors (e_u, e_phi, e_q, e_p) against the exact fields; the flux
    errors compare q against -grad u and p against -grad phi."""
    cb = blocks if blocks is not None else build_blocks(mesh, bases, 1.0)
    x, y = cb.qp[..., 0], cb.qp[..., 1]

    def l2sq(fq):
        return np.einsum("c,q,cq->", cb.detj, cb.wq, fq ** 2)

    nV = cb.n_v
    vq = bases.v_at_q
    gux, guy = case.grad_u(x, y, t)
    gpx, gpy = case.grad_phi(x, y, t)
    qx = np.einsum("ci,qi->cq", state.q[:, :nV], vq) / cb.sdet[:, None]
    qy = np.einsum("ci,qi->cq", state.q[:, nV:], vq) / cb.sdet[:, None]
    px = np.einsum("ci,qi->cq", state.p[:, :nV], vq) / cb.sdet[:, None]
    py = np.einsum("ci,qi->cq", state.p[:, nV:], vq) / cb.sdet[:, None]

    e_u = math.sqrt(l2sq(cb.w_at_quad(state.u) - case.u(x, y, t)))
    e_phi = math.sqrt(l2sq(cb.w_at_quad(state.phi) - case.phi(x, y, t)))
    e_q = math.sqrt(l2sq(qx + gux) + l2sq(qy + guy))
    e_p = math.sqrt(l2sq(px + gpx) + l2sq(py + gpy))
    return e_u, e_phi, e_q, e_p


def table_time_step(level, k):
    """Time step rule tied to the mesh: dt = 2 (h/sqrt(2))^(k+2)."""
    return 2.0 * (2.0 ** -level) ** (k + 2)


CONVERGENCE_CSV_HEADER = ("k,level,h_over_sqrt2,err_u,rate_u,err_phi,"
                          "rate_phi,err_q,rate_q,err_p,rate_p")

DIAGNOSTICS_CSV_HEADER = "step,t,mass,energy,newton_iters,minres_iters"


def run_convergence(cfg, levels, case, dt_rule="table", progress=None):
    """Manufactured-solution convergence study.

    For each level: fresh mesh, dt from the table rule (or cfg.dt when
    dt_rule='fixed'), full integration to case.T, errors at the final
    time.  Returns rows keyed like the CSV header; rates are log2 ratios
    between consecutive levels.
    """
    if len(levels) < 1:
        raise ValueError("need at least one level")
    s1, s2 = case.sources(cfg.pe, cfg.eps)
    rows = []
    prev = None
    for lev in levels:
        mesh = build_structured_mesh(lev)
        bases = make_bases(cfg.k)
        dt = table_time_step(lev, cfg.k) if dt_rule == "table" else cfg.dt
        run_cfg = RunConfig(
            k=cfg.k, pe=cfg.pe, eps=cfg.eps, alpha=cfg.alpha,
            tau_c=cfg.tau_c, dt=dt, T=case.T, scheme=cfg.scheme,
            newton_abs_tol=cfg.newton_abs_tol,
            newton_max_iter=cfg.newton_max_iter,
            minres_abs_tol=cfg.minres_abs_tol,
            minres_rel_tol=cfg.minres_rel_tol,
            preconditioner=cfg.preconditioner, seed=cfg.seed,
            threads=cfg.threads)
        stepper = Stepper(mesh, bases, run_cfg, beta=case.beta,
                          sources=CallableSources(s1, s2))
        state = stepper.init_state(lambda x, y: case.u(x, y, 0.0))
        for _ in range(run_cfg.num_steps):
            state, _rep = stepper.advance(state)
        errs = compute_errors(state, case, state.t, mesh, bases,
                              blocks=stepper.blocks)
        rates = [float("nan")] * 4 if prev is None else \
            [np.log2(a / b) for a, b in zip(prev, errs)]
        rows.append({
            "k": cfg.k, "level": lev, "h_over_sqrt2": 2.0 ** -lev,
            "err_u": errs[0], "rate_u": rates[0],
            "err_phi": errs[1], "rate_phi": rates[1],
            "err_q": errs[2], "rate_q": rates[2],
            "err_p": errs[3], "rate_p": rates[3]})
        prev = errs
        if progress is not None:
            progress(rows[-1])
    return rows


def sample_on_lattice(state, mesh, bases, n=256):
    """Evaluate the order parameter on an n-by-n lattice of cell-center
    points (i+1/2)/n; returns (n, n) with [j, i] at (x_i, y_j)."""
    coords = (np.arange(n) + 0.5) / n
    xg, yg = np.meshgrid(coords, coords, indexing="xy")
    return _eval_u(state.u, mesh, bases, xg.ravel(), yg.ravel()).reshape(n, n)


def _eval_u(u, mesh, bases, x, y):
    nsq = 2 ** mesh.level
    ix = np.clip((x * nsq).astype(int), 0, nsq - 1)
    iy = np.clip((y * nsq).astype(int), 0, nsq - 1)
    fx = x * nsq - ix
    fy = y * nsq - iy
    cells = 2 * (iy * nsq + ix) + (fx < fy)
    v0 = mesh.vertices[mesh.cells[cells, 0]]
    from .polybasis import cell_maps
    _, jinv, detj = cell_maps(mesh)
    rel = np.stack([x - v0[:, 0], y - v0[:, 1]], axis=1)
    ref = np.einsum("cde,ce->cd", jinv[cells], rel)
    vals = bases.tri_w.eval(ref)
    return np.einsum("ci,ci->c", u[cells], vals) / np.sqrt(detj[cells])


@dataclass
class Snapshot:
    t: float
    step: int
    grid: np.ndarray


def run_simulation(case, cfg, snapshot_writer=None, lattice=256,
                   progress=None):
    """Evolve a simulation case, recording mass/energy per step and
    sampling lattice snapshots at the requested times.

    Snapshot times are rounded to the nearest step.  If snapshot_writer is
    given it is called with each Snapshot as soon as it exists, so partial
    output survives a failed run.  Returns (snapshots, diagnostics rows).
    """
    mesh = build_structured_mesh(case.level)
    bases = make_bases(cfg.k)
    run_cfg = RunConfig(
        k=cfg.k, pe=case.pe, eps=case.eps, alpha=cfg.alpha,
        tau_c=cfg.tau_c, dt=case.dt, T=case.T, scheme=cfg.scheme,
        newton_abs_tol=cfg.newton_abs_tol,
        newton_max_iter=cfg.newton_max_iter,
        minres_abs_tol=cfg.minres_abs_tol,
        minres_rel_tol=cfg.minres_rel_tol,
        preconditioner=cfg.preconditioner, seed=case.seed,
        threads=cfg.threads)
    stepper = Stepper(mesh, bases, run_cfg, beta=case.beta)
    state = stepper.init_state(case.initial_data(mesh))

    n_steps = run_cfg.num_steps
    snap_steps = sorted({min(n_steps, max(0, int(round(t / case.dt))))
                         for t in case.snapshot_times})
    snapshots = []
    diagnostics = [{
        "step": 0, "t": 0.0, "mass": state.mass,
        "energy": state_energy(state, run_cfg.eps, run_cfg.alpha,
                               stepper.blocks),
        "newton_iters": 0, "minres_iters": 0}]

    def take(step, st):
        snap = Snapshot(t=st.t, step=step,
                        grid=sample_on_lattice(st, mesh, bases, lattice))
        snapshots.append(snap)
        if snapshot_writer is not None:
            snapshot_writer(snap)

    if 0 in snap_steps:
        take(0, state)
    for step in range(1, n_steps + 1):
        state, rep = stepper.advance(state)
        diagnostics.append({
            "step": step, "t": state.t, "mass": state.mass,
            "energy": rep.energy, "newton_iters": rep.newton_iters,
            "minres_iters": sum(rep.minres_iters)})
        if step in snap_steps:
            take(step, state)
        if progress is not None:
            progress(step, n_steps, rep)
    return snapshots, diagnostics


def compute_energy(state, eps, alpha, mesh, bases, blocks=None):
    """Discrete free energy (quartic well + eps^2/2 mixed seminorm)."""
    cb = blocks if blocks is not None else build_blocks(mesh, bases, alpha)
    return state_energy(state, eps, alpha, cb)


def compute_mass(state, mesh):
    """Total mass (u_h, 1)."""
    return state_mass(state, mesh)
