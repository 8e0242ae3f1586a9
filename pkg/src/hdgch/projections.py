"""Coupled elliptic projection of smooth fields into the HDG spaces.

Given exact scalar fields u and phi with analytic Laplacians and a
divergence-free velocity, the projection solves two mixed problems in
sequence: first the flux/scalar/trace triple of u from

    A(qI, uI, uhatI; r2, w2, mu2) = (-lap u, w2),     (uI - u, 1) = 0,

then, inserting (uI, uhatI) into the convection functional,

    B(uI, uhatI; w1[, mu1]) + (1/Pe) A(pI, phiI, phihatI; r1, w1, mu1)
        = (div(beta u) - (1/Pe) lap phi, w1),         (phiI - phi, 1) = 0.

Both solves condense to symmetric trace systems with one scalar Lagrange
multiplier for the mean constraint.  The scalar components approximate at
order k+2; with the upwind-penalized convection functional, the phi
component drops to order k+1 when k = 0 but stays optimal for k >= 1.
"""

from dataclasses import dataclass

import numpy as np

from . import hdgops
from .hdgops import build_blocks, cell_constant_moments
from .stepper import condense_and_solve


@dataclass
class EllipticProjection:
    """Projected coefficient arrays and the two mean-constraint
    multipliers (both should sit at quadrature-error level)."""

    q: np.ndarray
    u: np.ndarray
    uhat: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    phihat: np.ndarray
    multiplier_u: float
    multiplier_phi: float


def _mixed_poisson_solve(cb, mesh, bases, rhs_w, rhs_m, constraint_value,
                         scale, abs_tol, rel_tol):
    """Solve scale * A(q, u, uhat; .) = rhs with a mean constraint on u.

    rhs_w is the scalar-test functional (nc, nW), rhs_m an optional
    trace-test functional (nf, nF).  Sign conventions follow the
    symmetrized form (scalar and trace test rows flipped).
    """
    nV, nW, nF = cb.n_v, cb.n_w, cb.n_f
    nc = mesh.num_cells
    cmom = cell_constant_moments(mesh)

    ni = 2 * nV + nW
    ng = 3 * nF + 1
    iq = slice(0, 2 * nV)
    iw = slice(2 * nV, 2 * nV + nW)
    K_II = np.zeros((nc, ni, ni))
    K_IG = np.zeros((nc, ni, ng))
    K_GG = np.zeros((nc, ng, ng))
    K_II[:, iq, iq] = scale * np.eye(2 * nV)
    K_II[:, iq, iw] = -scale * cb.G
    K_II[:, iw, iq] = -scale * np.transpose(cb.G, (0, 2, 1))
    K_II[:, iw, iw] = -scale * cb.S1
    K_IG[:, iq, :3 * nF] = scale * cb.N
    K_IG[:, iw, :3 * nF] = scale * cb.S2
    K_IG[:, 2 * nV, 3 * nF] = cmom
    idx = np.arange(3 * nF)
    K_GG[:, idx, idx] = -scale * np.repeat(cb.alpha_h, nF, axis=1)

    nglob = mesh.num_faces * nF + 1
    gmap = np.concatenate([
        (mesh.cell_faces[:, :, None] * nF
         + np.arange(nF)[None, None, :]).reshape(nc, 3 * nF),
        np.full((nc, 1), mesh.num_faces * nF)], axis=1)

    b_I = np.zeros((nc, ni))
    b_I[:, iw] = -rhs_w
    b_G_dense = np.zeros(nglob)
    if rhs_m is not None:
        b_G_dense[:mesh.num_faces * nF] = -rhs_m.ravel()
    b_G_dense[-1] = constraint_value

    sol = condense_and_solve(K_II, K_IG, K_GG, gmap, nglob, b_I, None,
                             abs_tol=abs_tol, rel_tol=rel_tol,
                             b_G_dense=b_G_dense)
    q = sol.interior[:, iq]
    u = sol.interior[:, iw]
    uhat = sol.trace[:mesh.num_faces * nF].reshape(mesh.num_faces, nF)
    lam = float(sol.trace[-1])
    return q, u, uhat, lam


def solve_elliptic_projection(case, t, cfg, mesh, bases, blocks=None):
    """Project the exact fields of a manufactured case at time t.

    The case provides u, phi, their Laplacians and the velocity field (see
    experiments.ManufacturedCase).  cfg supplies pe, alpha, tau_c, scheme
    and the linear-solver tolerances.
    """
    cb = blocks if blocks is not None else build_blocks(mesh, bases,
                                                        cfg.alpha)
    x, y = cb.qp[..., 0], cb.qp[..., 1]
    area = mesh.cell_areas.sum()

    # scalar u system: A(...) = (-lap u, w)
    rhs_u = cb.w_moments(-case.lap_u(x, y, t))
    mean_u = float(np.einsum("c,q,cq->", cb.detj, cb.wq, case.u(x, y, t)))
    q, u, uhat, lam_u = _mixed_poisson_solve(
        cb, mesh, bases, rhs_u, None, mean_u, 1.0,
        cfg.minres_abs_tol, cfg.minres_rel_tol)

    # phi system: (1/Pe) A(...) = (div(beta u) - (1/Pe) lap phi, w) - B(uI,...)
    bx, by = case.beta(x, y)
    gux, guy = case.grad_u(x, y, t)
    f1 = bx * gux + by * guy - case.lap_phi(x, y, t) / cfg.pe
    rhs_phi = cb.w_moments(f1)
    beta_cache = hdgops.BetaCache(mesh, bases, case.beta, blocks=cb)
    if cfg.scheme == "upwind":
        bw, bm = hdgops.assemble_B_upwind((u, uhat), beta_cache, cfg.tau_c,
                                          mesh, bases, blocks=cb)
    else:
        bw = hdgops.assemble_B_explicit((u, uhat), beta_cache, mesh, bases,
                                        blocks=cb)
        bm = None
    rhs_phi = rhs_phi - bw
    mean_phi = float(np.einsum("c,q,cq->", cb.detj, cb.wq,
                               case.phi(x, y, t)))
    p, phi, phihat, lam_phi = _mixed_poisson_solve(
        cb, mesh, bases, rhs_phi, -bm if bm is not None else None,
        mean_phi, 1.0 / cfg.pe, cfg.minres_abs_tol, cfg.minres_rel_tol)

    del area
    return EllipticProjection(q=q, u=u, uhat=uhat, p=p, phi=phi,
                              phihat=phihat, multiplier_u=lam_u,
                              multiplier_phi=lam_phi)


def projection_errors(proj, case, t, cfg, mesh, bases, blocks=None):
    """L2 errors of the four projected fields against the exact ones."""
    cb = blocks if blocks is not None else build_blocks(mesh, bases,
                                                        cfg.alpha)
    x, y = cb.qp[..., 0], cb.qp[..., 1]

    def l2(field_q):
        return float(np.sqrt(np.einsum("c,q,cq->", cb.detj, cb.wq,
                                       field_q ** 2)))

    nV = cb.n_v
    vq = bases.v_at_q
    uq = cb.w_at_quad(proj.u)
    phq = cb.w_at_quad(proj.phi)
    qx = np.einsum("ci,qi->cq", proj.q[:, :nV], vq) / cb.sdet[:, None]
    qy = np.einsum("ci,qi->cq", proj.q[:, nV:], vq) / cb.sdet[:, None]
    px = np.einsum("ci,qi->cq", proj.p[:, :nV], vq) / cb.sdet[:, None]
    py = np.einsum("ci,qi->cq", proj.p[:, nV:], vq) / cb.sdet[:, None]

    gux, guy = case.grad_u(x, y, t)
    gpx, gpy = case.grad_phi(x, y, t)
    e_u = l2(uq - case.u(x, y, t))
    e_phi = l2(phq - case.phi(x, y, t))
    e_q = float(np.sqrt(l2(qx + gux) ** 2 + l2(qy + guy) ** 2))
    e_p = float(np.sqrt(l2(px + gpx) ** 2 + l2(py + gpy) ** 2))
    return e_u, e_q, e_phi, e_p


def projection_error_study(case, levels, cfg, t=0.3):
    """Projection errors and observed orders over a sequence of levels.

    Returns rows of (level, h, e_u, rate_u, e_q, rate_q, e_phi, rate_phi,
    e_p, rate_p); rates are log2 ratios between consecutive levels.
    """
    from .mesh import build_structured_mesh
    from .polybasis import make_bases

    if len(levels) < 1:
        raise ValueError("need at least one level")
    rows = []
    prev = None
    for lev in levels:
        mesh = build_structured_mesh(lev)
        bases = make_bases(cfg.k)
        cb = build_blocks(mesh, bases, cfg.alpha)
        proj = solve_elliptic_projection(case, t, cfg, mesh, bases,
                                         blocks=cb)
        errs = projection_errors(proj, case, t, cfg, mesh, bases, blocks=cb)
        rates = [np.nan] * 4 if prev is None else \
            [np.log2(a / b) if b > 0 else np.nan
             for a, b in zip(prev, errs)]
        row = [lev, mesh.h]
        for e, r in zip(errs, rates):
            row.extend([e, r])
        rows.append(row)
        prev = errs
    return rows


PROJECTION_CSV_HEADER = ("level,h,error_u,rate_u,error_q,rate_q,"
                         "error_phi,rate_phi,error_p,rate_p")
