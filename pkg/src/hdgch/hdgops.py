"""Element-local HDG operator blocks and diagnostic operators.

The mixed bilinear form couples a flux q in [P^k]^2, a scalar u in P^(k+1)
and a single-valued trace uhat in P^k per face:

    A(q,u,uhat; r,w,mu) = (q,r) - (u, div r) + <uhat, r.n>
                          + (div q, w) - <q.n, mu>
                          + alpha <h^-1 (P u - uhat), P w - mu>,

with P the face L2 projection onto the trace space (reduced-degree
stabilization).  Because all bases are orthonormal in the physical metric,
(q,r) and (u,w) are plain coefficient dot products and P is a small dense
matrix per (cell, face).

The convection functional

    B(u,uhat; w) = -(beta u, grad w) + <beta.n uhat, w>

enters the right-hand side only (explicit treatment); the upwind variant
adds the penalty <tau_c (u - uhat), w - mu>, which also produces a
trace-test component.
"""

from dataclasses import dataclass

import numpy as np

from . import polybasis
from .errors import ModelError
from .polybasis import cell_maps, face_quad_points, physical_points, \
    reference_preimages


@dataclass(frozen=True)
class LocalBlocks:
    """Operator blocks of one cell.

    The bilinear form on the cell, for coefficient vectors
    (q, u, uhat_loc) against (r, w, mu_loc) with uhat_loc/mu_loc the
    concatenated 3-face trace coefficients, is

        r.(q - div_ @ u + flux @ uhat) + w.(div_.T @ q) - mu.(flux.T @ q)
        + sum_f alpha_h[f] (trace_proj[f] @ u - uhat_f).(trace_proj[f] @ w - mu_f)

    Mass matrices of q and u are identities (orthonormal bases).
    """

    cell: int
    div: np.ndarray          # (2nV, nW):   div[(c,i), j] = (B_j, d_c V_i)
    flux: np.ndarray         # (2nV, 3nF):  sign * n_c * int_E b_m V_i
    trace_proj: np.ndarray   # (3, nF, nW): int_E b_m B_j
    stab_ww: np.ndarray      # (nW, nW):   sum_f alpha_h[f] T_f^T T_f
    stab_wm: np.ndarray      # (nW, 3nF):  alpha_h[f] T_f^T per face block
    alpha_h: np.ndarray      # (3,): alpha / h_E per face
    mass_w: np.ndarray       # (nW, nW) identity, kept for completeness


class CellBlocks:
    """Batched operator blocks and tabulated geometry for a whole mesh.

    Built once per (mesh, bases, alpha); everything downstream (time
    stepping, projections, diagnostics) reads from here.  Immutable in use.
    """

    def __init__(self, mesh, bases, alpha):
        if alpha <= 0:
            raise ValueError(f"stabilization constant alpha must be > 0, got {alpha}")
        self.mesh = mesh
        self.bases = bases
        self.alpha = float(alpha)

        nV, nW, nF = bases.n_v, bases.n_w, bases.n_f
        self.n_v, self.n_w, self.n_f = nV, nW, nF
        nc = mesh.num_cells

        jac, jinv, detj = cell_maps(mesh)
        self.jinv = jinv
        self.detj = detj
        self.sdet = np.sqrt(detj)

        rule = bases.cell_rule
        self.wq = rule.weights
        self.qp = physical_points(mesh, rule.points)        # (nc, nq, 2)
        # physical gradients carry a 1/sqrt(detj) factor applied at use sites
        self.gv_phys = np.einsum("ced,qie->cqid", jinv, bases.gv_at_q)
        self.gw_phys = np.einsum("ced,qie->cqid", jinv, bases.gw_at_q)

        frule = bases.face_rule
        self.wfq = frule.weights
        self.fq = face_quad_points(mesh, frule)             # (nf, nqf, 2)
        self.ell = mesh.face_lengths[mesh.cell_faces]       # (nc, 3)
        self.signs = mesh.cell_face_signs                   # (nc, 3)
        self.normals = mesh.face_normals[mesh.cell_faces]   # (nc, 3, 2)

        # reference traces of cell bases at the canonical face points
        pts = self.fq[mesh.cell_faces]                      # (nc, 3, nqf, 2)
        ref = reference_preimages(mesh, pts)
        flat = ref.reshape(-1, 2)
        nqf = frule.points.shape[0]
        self.w_trace = bases.tri_w.eval(flat).reshape(nc, 3, nqf, nW)
        self.v_trace = bases.tri_v.eval(flat).reshape(nc, 3, nqf, nV)

        # G[(c,i), j] = int_K B_j d_c V_i ; detj cancels against 1/sdet^2
        G = np.einsum("q,qj,cqid->cdij", rule.weights, bases.w_at_q,
                      self.gv_phys)
        self.G = G.reshape(nc, 2 * nV, nW)

        # T[c,f,m,j] = int_E b_m B_j ds = sqrt(l)/sdet * sum wf b_m W(ref)
        mv = bases.m_at_fq                                   # (nqf, nF)
        T = np.einsum("q,qm,cfqj->cfmj", self.wfq, mv, self.w_trace)
        self.T = T * (np.sqrt(self.ell) / self.sdet[:, None])[:, :, None, None]

        # N[(c,i),(f,m)] = sign * n_c * int_E b_m V_i ds
        NV = np.einsum("q,qm,cfqi->cfmi", self.wfq, mv, self.v_trace)
        NV = NV * (np.sqrt(self.ell) / self.sdet[:, None])[:, :, None, None]
        N = np.einsum("cfd,cfmi->cdifm",
                      self.signs[:, :, None] * self.normals, NV)
        self.N = N.reshape(nc, 2 * nV, 3 * nF)

        self.alpha_h = self.alpha / self.ell                 # (nc, 3)
        self.S1 = np.einsum("cf,cfmi,cfmj->cij", self.alpha_h, self.T, self.T)
        S2 = np.einsum("cf,cfmj->cjfm", self.alpha_h, self.T)
        self.S2 = S2.reshape(nc, nW, 3 * nF)

    # -- evaluation helpers -------------------------------------------------

    def w_at_quad(self, u):
        """Scalar field values at volume quadrature points, (nc, nq)."""
        return (u @ self.bases.w_at_q.T) / self.sdet[:, None]

    def w_moments(self, fq):
        """Moments (f, B_i)_K from field values at quadrature points."""
        return self.sdet[:, None] * np.einsum(
            "q,cq,qi->ci", self.wq, fq, self.bases.w_at_q)

    def field_moments(self, f, t=None):
        """Moments of a callable field f(x, y) or f(x, y, t)."""
        x, y = self.qp[..., 0], self.qp[..., 1]
        fq = f(x, y) if t is None else f(x, y, t)
        return self.w_moments(np.broadcast_to(fq, x.shape))

    def trace_at_quad(self, u):
        """Cell-side traces of a scalar field at face quadrature points,
        (nc, 3, nqf)."""
        return np.einsum("cj,cfqj->cfq", u, self.w_trace) / \
            self.sdet[:, None, None]

    def hat_at_quad(self, uhat):
        """Trace-space field values at face quadrature points, (nf, nqf)."""
        return (uhat @ self.bases.m_at_fq.T) / \
            np.sqrt(self.mesh.face_lengths)[:, None]

    def local_blocks(self, cell):
        """Single-cell view (LocalBlocks) of the batched arrays."""
        nF = self.n_f
        s3 = np.zeros((3 * nF, 3 * nF))
        for f in range(3):
            s3[f * nF:(f + 1) * nF, f * nF:(f + 1) * nF] = \
                self.alpha_h[cell, f] * np.eye(nF)
        return LocalBlocks(
            cell=int(cell), div=self.G[cell], flux=self.N[cell],
            trace_proj=self.T[cell], stab_ww=self.S1[cell],
            stab_wm=self.S2[cell], alpha_h=self.alpha_h[cell].copy(),
            mass_w=np.eye(self.n_w))


def build_blocks(mesh, bases, alpha):
    """Assemble the per-cell operator blocks for the whole mesh."""
    return CellBlocks(mesh, bases, alpha)


def assemble_A_local(cell, mesh, bases, alpha):
    """Operator blocks of a single cell."""
    return build_blocks(mesh, bases, alpha).local_blocks(cell)


def apply_A(blocks, trial, test):
    """Evaluate the mixed bilinear form on one cell.

    trial and test are (q, u, uhat_loc) coefficient triples with uhat_loc of
    length 3*nF (per-face trace coefficients of this cell's faces).
    """
    q, u, uh = trial
    r, w, mu = test
    nF = blocks.trace_proj.shape[1]
    val = r @ (q - blocks.div @ u + blocks.flux @ uh)
    val += w @ (blocks.div.T @ q)
    val -= mu @ (blocks.flux.T @ q)
    for f in range(3):
        pu = blocks.trace_proj[f] @ u - uh[f * nF:(f + 1) * nF]
        pw = blocks.trace_proj[f] @ w - mu[f * nF:(f + 1) * nF]
        val += blocks.alpha_h[f] * (pu @ pw)
    return val


# ---------------------------------------------------------------------------
# convection functionals

class BetaCache:
    """Velocity field sampled at all quadrature points.

    Verifies the no-penetration condition beta.n = 0 on boundary faces.
    """

    def __init__(self, mesh, bases, beta, blocks=None, bnd_tol=1e-10):
        cb = blocks if blocks is not None else build_blocks(mesh, bases, 1.0)
        bx, by = beta(cb.qp[..., 0], cb.qp[..., 1])
        self.vol = np.stack(np.broadcast_arrays(bx, by, cb.qp[..., 0]),
                            axis=-1)[..., :2]
        fx, fy = beta(cb.fq[..., 0], cb.fq[..., 1])
        self.face = np.stack(np.broadcast_arrays(fx, fy, cb.fq[..., 0]),
                             axis=-1)[..., :2]
        bn = np.einsum("fqd,fd->fq", self.face, mesh.face_normals)
        worst = np.abs(bn[mesh.boundary]).max() if mesh.boundary.any() else 0.0
        if worst > bnd_tol:
            raise ModelError(
                f"velocity is not tangent to the boundary: max |beta.n| = "
                f"{worst:.3e} exceeds {bnd_tol:.1e}")
        self.face_normal_comp = bn      # (nf, nqf)


def _as_beta_cache(beta, mesh, bases, blocks):
    if beta is None:
        return None
    if isinstance(beta, BetaCache):
        return beta
    return BetaCache(mesh, bases, beta, blocks=blocks)


def assemble_B_explicit(state, beta, mesh, bases, blocks=None):
    """Convection functional B(u, uhat; .) over the scalar test space.

    Returns per-cell coefficient arrays (nc, nW); a right-hand-side
    contribution only, never part of the system matrix.
    """
    cb = blocks if blocks is not None else build_blocks(mesh, bases, 1.0)
    u, uhat = state
    bc = _as_beta_cache(beta, mesh, bases, cb)
    if bc is None:
        return np.zeros((mesh.num_cells, cb.n_w))

    uq = cb.w_at_quad(u)
    bdotg = np.einsum("cqd,cqid->cqi", bc.vol, cb.gw_phys)
    out = -cb.sdet[:, None] * np.einsum("q,cq,cqi->ci", cb.wq, uq, bdotg)

    uhq = cb.hat_at_quad(uhat)                           # (nf, nqf)
    bn_u = bc.face_normal_comp * uhq                     # (nf, nqf)
    per_face = bn_u[mesh.cell_faces]                     # (nc, 3, nqf)
    scale = cb.signs * cb.ell / cb.sdet[:, None]
    out += np.einsum("cf,q,cfq,cfqi->ci",
                     scale, cb.wfq, per_face, cb.w_trace)
    return out


def assemble_B_upwind(state, beta, tau_c, mesh, bases, blocks=None):
    """Upwind-penalized convection functional.

    Adds <tau_c (u - uhat), w - mu> to the explicit form; returns the pair
    of functionals (over the scalar space, over the trace space).
    tau_c is a positive constant or per-face array.
    """
    cb = blocks if blocks is not None else build_blocks(mesh, bases, 1.0)
    tau = np.broadcast_to(np.asarray(tau_c, dtype=float),
                          (mesh.num_faces,))
    if np.any(tau <= 0):
        raise ValueError("upwind stabilization tau_c must be positive on "
                         "every face")
    u, uhat = state
    bw = assemble_B_explicit(state, beta, mesh, bases, blocks=cb)

    utr = cb.trace_at_quad(u)                            # (nc, 3, nqf)
    uhq = cb.hat_at_quad(uhat)[mesh.cell_faces]          # (nc, 3, nqf)
    jump = utr - uhq
    tau_cf = tau[mesh.cell_faces]                        # (nc, 3)
    wscale = tau_cf * cb.ell / cb.sdet[:, None]
    bw = bw + np.einsum("cf,q,cfq,cfqi->ci",
                        wscale, cb.wfq, jump, cb.w_trace)

    mv = cb.bases.m_at_fq                                # (nqf, nF)
    mscale = tau_cf * np.sqrt(cb.ell)
    contrib = -np.einsum("cf,q,cfq,qm->cfm", mscale, cb.wfq, jump, mv)
    bm = np.zeros((mesh.num_faces, cb.n_f))
    np.add.at(bm, mesh.cell_faces.ravel(),
              contrib.reshape(-1, cb.n_f))
    return bw, bm


# ---------------------------------------------------------------------------
# diagnostic operators

def cell_constant_moments(mesh):
    """(B_0, 1)_K per cell: moments of the constant 1 in the scalar basis."""
    return np.sqrt(mesh.cell_areas)


def discrete_laplacian(u, mesh, bases, alpha, blocks=None,
                       abs_tol=1e-14, rel_tol=1e-14, max_iter=None):
    """Discrete Laplacian of a scalar field.

    Solves the flux/trace constraint A(q^u, u, uhat^u; r, 0, mu) = 0 for
    (q^u, uhat^u), then returns the coefficients of Delta_h u defined by
    (Delta_h u, w) = -A(q^u, u, uhat^u; 0, w, 0).
    """
    from .linalg import SymmetricSparseMatrix, minres_solve

    cb = blocks if blocks is not None else build_blocks(mesh, bases, alpha)
    nF = cb.n_f
    nglob = mesh.num_faces * nF
    gmap = (mesh.cell_faces[:, :, None] * nF
            + np.arange(nF)[None, None, :]).reshape(mesh.num_cells, 3 * nF)

    # eliminate q = G u - N uhat; trace system (N^T N + S3) uhat = N^T G u + S2^T u
    A_loc = np.einsum("cia,cib->cab", cb.N, cb.N)
    idx = np.arange(3 * nF)
    A_loc[:, idx, idx] += np.repeat(cb.alpha_h, nF, axis=1)
    rhs_loc = np.einsum("cia,cij,cj->ca", cb.N, cb.G, u) \
        + np.einsum("cja,cj->ca", cb.S2, u)

    rows = np.repeat(gmap, 3 * nF, axis=1).ravel()
    cols = np.tile(gmap, (1, 3 * nF)).ravel()
    A = SymmetricSparseMatrix.from_coo(nglob, rows, cols, A_loc.ravel())
    b = np.zeros(nglob)
    np.add.at(b, gmap.ravel(), rhs_loc.ravel())

    res = minres_solve(A, b, abs_tol, rel_tol,
                       max_iter if max_iter is not None else max(200, 20 * nglob))
    uhat = res.x[gmap]
    q = np.einsum("cij,cj->ci", cb.G, u) - np.einsum("cia,ca->ci", cb.N, uhat)
    lap = -(np.einsum("cij,ci->cj", cb.G, q)
            + np.einsum("cij,cj->ci", cb.S1, u)
            - np.einsum("cja,ca->cj", cb.S2, uhat))
    return lap


def hdg_laplace_inverse(u, mesh, bases, alpha, blocks=None,
                        abs_tol=1e-14, rel_tol=1e-13):
    """HDG Poisson inverse of a (mean-zero) scalar field and its induced
    negative-order norm.

    Solves A(Q, W, Uhat; r, w, mu) = (u, w) for all test triples with the
    zero-mean constraint on W enforced by a scalar Lagrange multiplier, and
    returns (Q, W, Uhat, sqrt((u, W))).  The mean of u is projected out
    first, so callers may pass any field.
    """
    from .stepper import condense_and_solve

    cb = blocks if blocks is not None else build_blocks(mesh, bases, alpha)
    nV, nW, nF = cb.n_v, cb.n_w, cb.n_f
    nc = mesh.num_cells

    cmom = cell_constant_moments(mesh)
    u = u.copy()
    u[:, 0] -= (u[:, 0] @ cmom) / mesh.cell_areas.sum() * cmom

    ni = 2 * nV + nW
    ng = 3 * nF + 1
    K_II = np.zeros((nc, ni, ni))
    K_IG = np.zeros((nc, ni, ng))
    K_GG = np.zeros((nc, ng, ng))
    iq = slice(0, 2 * nV)
    iw = slice(2 * nV, 2 * nV + nW)
    K_II[:, iq, iq] = np.eye(2 * nV)
    K_II[:, iq, iw] = -cb.G
    K_II[:, iw, iq] = -np.transpose(cb.G, (0, 2, 1))
    K_II[:, iw, iw] = -cb.S1
    K_IG[:, iq, :3 * nF] = cb.N
    K_IG[:, iw, :3 * nF] = cb.S2
    K_IG[:, 2 * nV, 3 * nF] = cmom          # multiplier column in W rows
    idx = np.arange(3 * nF)
    K_GG[:, idx, idx] = -np.repeat(cb.alpha_h, nF, axis=1)

    nglob = mesh.num_faces * nF + 1
    gmap = np.concatenate([
        (mesh.cell_faces[:, :, None] * nF
         + np.arange(nF)[None, None, :]).reshape(nc, 3 * nF),
        np.full((nc, 1), mesh.num_faces * nF)], axis=1)

    b_I = np.zeros((nc, ni))
    b_I[:, iw] = -u                          # flipped scalar rows
    sol = condense_and_solve(K_II, K_IG, K_GG, gmap, nglob, b_I, None,
                             abs_tol=abs_tol, rel_tol=rel_tol)
    piV = sol.interior[:, iq]
    piW = sol.interior[:, iw]
    piM = sol.trace[:mesh.num_faces * nF].reshape(mesh.num_faces, nF)
    val = float(np.einsum("ci,ci->", u, piW))
    if val < -1e-10 * max(1.0, float(np.einsum("ci,ci->", u, u))):
        raise AssertionError(
            f"negative-order norm came out negative: {val:.3e}")
    return piV, piW, piM, np.sqrt(max(val, 0.0))
