"""Reference-element bases, quadrature rules and L2 projections.

Cell bases are orthonormal on the reference triangle T = {x,y >= 0, x+y <= 1}
(Jacobi-polynomial construction on the collapsed square), face bases are
shifted Legendre polynomials orthonormal on [0,1].  Physical bases divide by
the square root of the element measure, so every mass matrix is exactly the
identity and local solves never touch a Gram matrix.

Quadrature on the triangle is a conical (Duffy) product of Gauss-Legendre and
Gauss-Jacobi(1,0) rules, exact for any requested total degree.
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import eval_jacobi, eval_legendre

from .errors import TopologyError


def tri_dim(degree):
    """Dimension of P^degree on a triangle."""
    return (degree + 1) * (degree + 2) // 2


@dataclass(frozen=True)
class QuadratureRule:
    """Positive-weight rule on the reference triangle or segment."""

    domain: str          # 'triangle' or 'segment'
    exactness: int       # total polynomial degree integrated exactly
    points: np.ndarray   # (nq, 2) for triangle, (nq,) for segment
    weights: np.ndarray  # (nq,)


def triangle_rule(exactness):
    """Conical product rule on the reference triangle.

    Built from n-point Gauss-Legendre (xi) and Gauss-Jacobi(1,0) (eta)
    rules with x = xi*(1-eta), y = eta; the Jacobi weight absorbs the
    Duffy Jacobian, so the rule is exact for total degree 2n-1.
    """
    from scipy.special import roots_jacobi

    n = max(1, (exactness + 2) // 2)
    xg, wg = leggauss(n)
    xi, wxi = (xg + 1.0) / 2.0, wg / 2.0
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    eta, weta = (xj + 1.0) / 2.0, wj / 4.0

    x = np.outer(xi, 1.0 - eta).ravel()
    y = np.tile(eta, n)
    w = np.outer(wxi, weta).ravel()
    return QuadratureRule("triangle", 2 * n - 1,
                          np.column_stack([x, y]), w)


def segment_rule(exactness):
    """Gauss-Legendre rule mapped to [0,1]."""
    n = max(1, (exactness + 2) // 2)
    xg, wg = leggauss(n)
    return QuadratureRule("segment", 2 * n - 1,
                          (xg + 1.0) / 2.0, wg / 2.0)


class TriangleBasis:
    """Orthonormal polynomial basis of total degree <= degree on the
    reference triangle.

    The basis functions are c_mn * g_m(x, 1-y) * P_n^(2m+1,0)(2y-1) where
    g_m(x,u) = u^m P_m((2x-u)/u) is evaluated through a homogenized
    three-term recurrence, which stays finite at the collapsed vertex (0,1).
    """

    def __init__(self, degree):
        self.degree = int(degree)
        self.dim = tri_dim(degree)
        # index order: total degree d ascending, then m ascending
        self.index = [(m, d - m) for d in range(degree + 1)
                      for m in range(d + 1)]

    def _gm(self, x, u, want_grad):
        deg = self.degree
        npts = x.shape[0]
        g = np.empty((deg + 1, npts))
        g[0] = 1.0
        t = 2.0 * x - u
        if deg >= 1:
            g[1] = t
        for m in range(1, deg):
            g[m + 1] = ((2 * m + 1) * t * g[m] - m * u * u * g[m - 1]) / (m + 1)
        if not want_grad:
            return g, None, None
        gx = np.zeros_like(g)
        gu = np.zeros_like(g)
        if deg >= 1:
            gx[1] = 2.0
            gu[1] = -1.0
        for m in range(1, deg):
            gx[m + 1] = ((2 * m + 1) * (2.0 * g[m] + t * gx[m])
                         - m * u * u * gx[m - 1]) / (m + 1)
            gu[m + 1] = ((2 * m + 1) * (-g[m] + t * gu[m])
                         - m * (2.0 * u * g[m - 1] + u * u * gu[m - 1])) / (m + 1)
        return g, gx, gu

    def _tables(self, points, want_grad):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        u = 1.0 - y
        b = 2.0 * y - 1.0
        g, gx, gu = self._gm(x, u, want_grad)

        vals = np.empty((pts.shape[0], self.dim))
        grads = np.empty((pts.shape[0], self.dim, 2)) if want_grad else None
        for i, (m, n) in enumerate(self.index):
            c = np.sqrt(2.0 * (2 * m + 1) * (m + n + 1))
            jn = eval_jacobi(n, 2 * m + 1, 0, b)
            vals[:, i] = c * g[m] * jn
            if want_grad:
                djn = (0.0 if n == 0 else
                       0.5 * (n + 2 * m + 2)
                       * eval_jacobi(n - 1, 2 * m + 2, 1, b))
                grads[:, i, 0] = c * gx[m] * jn
                grads[:, i, 1] = c * (-gu[m] * jn + 2.0 * g[m] * djn)
        return vals, grads

    def eval(self, points):
        """Basis values at reference points, shape (npts, dim)."""
        return self._tables(points, False)[0]

    def grad(self, points):
        """Reference gradients at reference points, shape (npts, dim, 2)."""
        return self._tables(points, True)[1]


class SegmentBasis:
    """Shifted Legendre basis orthonormal on the reference segment [0,1]."""

    def __init__(self, degree):
        self.degree = int(degree)
        self.dim = degree + 1

    def eval(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        vals = np.empty((s.shape[0], self.dim))
        t = 2.0 * s - 1.0
        for j in range(self.dim):
            vals[:, j] = np.sqrt(2 * j + 1.0) * eval_legendre(j, t)
        return vals


@dataclass(frozen=True)
class BasisSet:
    """Reference bases and rules for one polynomial order k.

    Spaces: vector unknowns in [P^k]^2, scalar unknowns in P^(k+1), traces
    in P^k per face.  The cell rule is exact for the cubic nonlinearity,
    deg 4(k+1), and carries extra margin for source-term integrals.
    """

    k: int
    tri_v: TriangleBasis          # P^k components of the flux spaces
    tri_w: TriangleBasis          # P^(k+1) scalar space
    seg_m: SegmentBasis           # P^k trace space
    cell_rule: QuadratureRule
    face_rule: QuadratureRule
    v_at_q: np.ndarray            # (nq, nV)
    w_at_q: np.ndarray            # (nq, nW)
    gv_at_q: np.ndarray           # (nq, nV, 2) reference gradients
    gw_at_q: np.ndarray           # (nq, nW, 2)
    m_at_fq: np.ndarray           # (nqf, nF)

    @property
    def n_v(self):
        return self.tri_v.dim

    @property
    def n_w(self):
        return self.tri_w.dim

    @property
    def n_f(self):
        return self.seg_m.dim


def make_bases(k, cell_exactness=None, face_exactness=None):
    """Bundle bases and quadrature for polynomial order k >= 0."""
    if k < 0:
        raise ValueError("polynomial order k must be >= 0")
    if cell_exactness is None:
        cell_exactness = max(4 * (k + 1), 2 * (k + 1) + 4)
    if face_exactness is None:
        face_exactness = 2 * (k + 1) + 5
    tri_v = TriangleBasis(k)
    tri_w = TriangleBasis(k + 1)
    seg_m = SegmentBasis(k)
    cell_rule = triangle_rule(cell_exactness)
    face_rule = segment_rule(face_exactness)
    return BasisSet(
        k=k, tri_v=tri_v, tri_w=tri_w, seg_m=seg_m,
        cell_rule=cell_rule, face_rule=face_rule,
        v_at_q=tri_v.eval(cell_rule.points),
        w_at_q=tri_w.eval(cell_rule.points),
        gv_at_q=tri_v.grad(cell_rule.points),
        gw_at_q=tri_w.grad(cell_rule.points),
        m_at_fq=seg_m.eval(face_rule.points),
    )


# ---------------------------------------------------------------------------
# cell geometry helpers

def cell_maps(mesh):
    """Affine map data for every cell.

    Returns (jac, jinv, detj) with jac[c] = [v1-v0 | v2-v0] as columns and
    detj = |det jac| = 2*area (positive for CCW cells).
    """
    v = mesh.vertices[mesh.cells]
    jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
    detj = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    jinv = np.empty_like(jac)
    jinv[:, 0, 0] = jac[:, 1, 1]
    jinv[:, 0, 1] = -jac[:, 0, 1]
    jinv[:, 1, 0] = -jac[:, 1, 0]
    jinv[:, 1, 1] = jac[:, 0, 0]
    jinv /= detj[:, None, None]
    return jac, jinv, detj


def physical_points(mesh, ref_points):
    """Map reference points into every cell; shape (nc, nq, 2)."""
    jac, _, _ = cell_maps(mesh)
    v0 = mesh.vertices[mesh.cells[:, 0]]
    return v0[:, None, :] + np.einsum("cde,qe->cqd", jac, ref_points)


def face_quad_points(mesh, face_rule):
    """Physical quadrature points on every face, canonical orientation."""
    p0 = mesh.vertices[mesh.faces[:, 0]]
    p1 = mesh.vertices[mesh.faces[:, 1]]
    s = face_rule.points
    return p0[:, None, :] + s[None, :, None] * (p1 - p0)[:, None, :]


def reference_preimages(mesh, points_phys):
    """Pull physical points (nc, ..., 2) back to cell reference coordinates."""
    _, jinv, _ = cell_maps(mesh)
    v0 = mesh.vertices[mesh.cells[:, 0]]
    shape = points_phys.shape
    rel = points_phys.reshape(shape[0], -1, 2) - v0[:, None, :]
    ref = np.einsum("cde,cqe->cqd", jinv, rel)
    return ref.reshape(shape)


# ---------------------------------------------------------------------------
# L2 projections

def project_cell(f, degree, mesh, rule=None):
    """Element-wise L2 projection of a scalar field onto P^degree.

    Returns coefficients (nc, dim) in the orthonormal physical basis, i.e.
    coeff[c, i] = (f, B_i)_K.

    Parameters
    ----------
    f : callable
        Vectorized field f(x, y) accepting numpy arrays.
    """
    basis = TriangleBasis(degree)
    if rule is None:
        rule = triangle_rule(2 * degree + 6)
    vals = basis.eval(rule.points)                      # (nq, nb)
    pts = physical_points(mesh, rule.points)            # (nc, nq, 2)
    fq = f(pts[..., 0], pts[..., 1])
    fq = np.broadcast_to(fq, pts.shape[:2])
    _, _, detj = cell_maps(mesh)
    # (f, B_i)_K = detj * sum_q w f phi_i / sqrt(detj)
    return np.sqrt(detj)[:, None] * np.einsum(
        "q,cq,qi->ci", rule.weights, fq, vals)


def project_face(f, degree, mesh, rule=None):
    """Face-wise L2 projection onto P^degree; coefficients (nf, degree+1)."""
    basis = SegmentBasis(degree)
    if rule is None:
        rule = segment_rule(2 * degree + 6)
    vals = basis.eval(rule.points)                      # (nq, nb)
    pts = face_quad_points(mesh, rule)                  # (nf, nq, 2)
    fq = f(pts[..., 0], pts[..., 1])
    fq = np.broadcast_to(fq, pts.shape[:2])
    lengths = mesh.face_lengths
    return np.sqrt(lengths)[:, None] * np.einsum(
        "q,fq,qi->fi", rule.weights, fq, vals)


def trace_projection_matrix(cell_degree, face_degree, cell, face, mesh,
                            rule=None):
    """Matrix taking cell-basis coefficients to the face L2 projection of
    their trace.

    (M c)_j is the j-th face-basis coefficient of the projection onto
    P^face_degree of the trace of the cell polynomial with coefficients c.
    Exact for polynomials (quadrature exactness covers both degrees).
    """
    local = np.nonzero(mesh.cell_faces[cell] == face)[0]
    if local.size == 0:
        raise TopologyError(f"face {face} is not an edge of cell {cell}")
    if rule is None:
        rule = segment_rule(cell_degree + face_degree + 4)
    tri = TriangleBasis(cell_degree)
    seg = SegmentBasis(face_degree)

    p0 = mesh.vertices[mesh.faces[face, 0]]
    p1 = mesh.vertices[mesh.faces[face, 1]]
    pts = p0[None, :] + rule.points[:, None] * (p1 - p0)[None, :]
    _, jinv, detj = cell_maps(mesh)
    ref = (pts - mesh.vertices[mesh.cells[cell, 0]]) @ jinv[cell].T
    ell = mesh.face_lengths[face]

    cell_vals = tri.eval(ref) / np.sqrt(detj[cell])     # physical basis trace
    face_vals = seg.eval(rule.points) / np.sqrt(ell)
    # (M)_{j,i} = int_E b_j B_i ds
    return ell * np.einsum("q,qj,qi->ji", rule.weights, face_vals, cell_vals)
