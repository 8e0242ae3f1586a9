"""Sparse symmetric matrices, dense local factorizations, and MINRES.

The globally coupled trace system produced by static condensation is
symmetric indefinite, so it is solved with a hand-rolled Paige-Saunders
MINRES: the recurrence exposes the (monotone) residual history, detects
Lanczos breakdown, and reports iteration counts, none of which the library
wrappers surface cleanly.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import AssemblyError, ConvergenceError, EliminationError, \
    SolverError


class SymmetricSparseMatrix:
    """CSR matrix with a symmetry certificate.

    Entries are assembled from COO triplets sorted by (row, col), so the
    stored layout and duplicate summation order are deterministic.
    finalize() records max |a_ij - a_ji| and refuses matrices that are not
    symmetric to 1e-12 relative to the largest entry.
    """

    def __init__(self, csr, asymmetry, max_entry):
        self.csr = csr
        self.dim = csr.shape[0]
        self.asymmetry = asymmetry
        self.max_entry = max_entry

    @property
    def asymmetry_rel(self):
        """Certificate value: max |a_ij - a_ji| over max |a_ij|."""
        return self.asymmetry / max(self.max_entry, 1e-300)

    @classmethod
    def from_coo(cls, dim, rows, cols, vals, tol=1e-12):
        order = np.lexsort((cols, rows))
        coo = scipy.sparse.coo_matrix(
            (np.asarray(vals, dtype=float)[order],
             (np.asarray(rows)[order], np.asarray(cols)[order])),
            shape=(dim, dim))
        csr = coo.tocsr()
        csr.sum_duplicates()
        diff = (csr - csr.T).tocoo()
        asym = float(np.abs(diff.data).max()) if diff.nnz else 0.0
        amax = float(np.abs(csr.data).max()) if csr.nnz else 0.0
        if asym > tol * max(amax, 1e-300):
            raise AssemblyError(
                f"symmetry certificate failed: max asymmetry {asym:.3e} vs "
                f"max entry {amax:.3e} (sign-convention bug?)")
        return cls(csr, asym, amax)

    def matvec(self, x):
        return self.csr @ x

    @property
    def norm_inf(self):
        """Max absolute row sum (cached); an upper bound on the spectral
        norm used for attainable-accuracy floors."""
        if not hasattr(self, "_norm_inf"):
            self._norm_inf = float(
                np.abs(self.csr).sum(axis=1).max()) if self.csr.nnz else 0.0
        return self._norm_inf

    def todense(self):
        return self.csr.toarray()

    def export_coordinate_text(self, path):
        """Write 'row col value' per line (external verification format)."""
        coo = self.csr.tocoo()
        with open(path, "w") as fh:
            fh.write(f"% symmetric {self.dim} x {self.dim}, "
                     f"nnz {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {float(v)!r}\n")


class DenseBlock:
    """Square dense matrix with a cached pivoted LU factorization."""

    def __init__(self, mat, label=None):
        self.mat = np.asarray(mat, dtype=float)
        if self.mat.ndim != 2 or self.mat.shape[0] != self.mat.shape[1]:
            raise ValueError("DenseBlock expects a square matrix")
        self.label = label
        self._lu = None

    def _factor(self):
        if self._lu is None:
            lu, piv = scipy.linalg.lu_factor(self.mat)
            scale = np.abs(self.mat).max(axis=1).max()
            pivots = np.abs(np.diag(lu))
            if scale == 0.0 or pivots.min() <= 1e-13 * scale:
                where = f" in cell {self.label}" if self.label is not None \
                    else ""
                raise EliminationError(
                    f"local block is singular to tolerance{where} "
                    f"(min pivot {pivots.min() if scale else 0.0:.3e})",
                    cell=self.label)
            self._lu = (lu, piv)
        return self._lu

    def solve(self, rhs):
        lu, piv = self._factor()
        return scipy.linalg.lu_solve((lu, piv), rhs)


def dense_factor_solve(block, rhs):
    """Solve block @ x = rhs through the cached factorization."""
    if not isinstance(block, DenseBlock):
        block = DenseBlock(block)
    return block.solve(rhs)


@dataclass
class MinresResult:
    x: np.ndarray
    iterations: int
    residual: float                  # true ||A x - b||
    history: list = field(default_factory=list)


def _minres_sweep(A, b, x, target, max_iter, precond, history):
    """One Paige-Saunders sweep from iterate x.

    The recurrence tracks the residual in the preconditioner-induced norm;
    whenever that estimate crosses the working target, the true 2-norm
    residual is measured and the working target tightened if they disagree
    (they drift apart near machine precision and under preconditioning).
    Appends the recurrence estimates (monotone within the sweep) to
    history and returns (x, iterations used, invariant-subspace flag,
    operator norm estimate).
    """
    eps = np.finfo(float).eps
    r1 = b - A.matvec(x)
    y = precond.solve(r1) if precond is not None else r1
    beta1 = r1 @ y
    if beta1 < 0:
        raise SolverError("preconditioner is not positive definite")
    beta1 = np.sqrt(beta1)
    if beta1 == 0.0:
        return x, 0, True, 0.0
    sweep_target = target

    oldb, beta = 0.0, beta1
    dbar, epsln = 0.0, 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    n = b.shape[0]
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1
    anorm = 0.0
    itn = 0
    last = np.inf
    while itn < max_iter:
        itn += 1
        v = y / beta
        y = A.matvec(v)
        if itn >= 2:
            y -= (beta / oldb) * r1
        alfa = v @ y
        y -= (alfa / beta) * r2
        r1, r2 = r2, y
        y = precond.solve(r2) if precond is not None else r2
        oldb, beta = beta, r2 @ y
        if beta < 0:
            raise SolverError("preconditioner is not positive definite")
        beta = np.sqrt(beta)
        anorm = max(anorm, np.sqrt(alfa * alfa + beta * beta + oldb * oldb))

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta

        gamma = max(np.sqrt(gbar * gbar + beta * beta), eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        res = abs(phibar)
        assert res <= last * (1.0 + 1e-9), \
            "MINRES residual increased, recurrence is corrupt"
        last = res
        history.append(res)
        if res <= sweep_target:
            true_res = float(np.linalg.norm(b - A.matvec(x)))
            norm_a = getattr(A, "norm_inf", None) or anorm
            if true_res <= target or true_res <= 30.0 * eps * (
                    norm_a * np.linalg.norm(x) + np.linalg.norm(b)):
                return x, itn, False, anorm
            # estimate runs ahead of the true residual; demand more
            sweep_target = res * min(0.5, 0.5 * target / true_res)
        if beta <= 10.0 * eps * max(anorm, 1.0):
            return x, itn, True, anorm
    return x, itn, False, anorm


def minres_solve(A, b, abs_tol, rel_tol, max_iter, x0=None, precond=None):
    """MINRES for a symmetric (possibly indefinite) system.

    Iterates until the true residual satisfies
    ||A x - b|| <= max(abs_tol, rel_tol * ||b||) or the attainable-accuracy
    floor eps * (||A|| ||x|| + ||b||) is hit; raises ConvergenceError
    (carrying the residual history) when the iteration budget runs out and
    SolverError on Lanczos breakdown.  Within a sweep the recurrence
    residual estimate is monotonically nonincreasing (asserted every
    iteration); if at these extreme tolerances it drifts from the true
    residual, the sweep is restarted from the current iterate, which
    re-anchors the estimate.

    Parameters
    ----------
    A : SymmetricSparseMatrix or any object with matvec(x)
    precond : optional SPD operator with solve(r); default none.
    """
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side contains non-finite entries")
    eps = np.finfo(float).eps
    norm_b = np.linalg.norm(b)
    target = max(abs_tol, rel_tol * norm_b)

    x = np.zeros(b.shape[0]) if x0 is None else np.array(x0, dtype=float)
    history = [float(np.linalg.norm(b - A.matvec(x))) if x0 is not None
               else float(norm_b)]
    if history[0] <= target:
        return MinresResult(x, 0, history[0], history)

    itn = 0
    best = history[0]
    stalled = 0
    for sweep in range(12):
        x, used, invariant, anorm = _minres_sweep(
            A, b, x, target, max_iter - itn, precond, history)
        itn += used
        true_res = float(np.linalg.norm(b - A.matvec(x)))
        norm_a = getattr(A, "norm_inf", None) or anorm
        floor = 30.0 * eps * (norm_a * np.linalg.norm(x) + norm_b)
        if true_res <= max(target, floor):
            return MinresResult(x, itn, true_res, history)
        if invariant:
            raise SolverError(
                f"MINRES breakdown: invariant Krylov subspace reached with "
                f"residual {true_res:.3e} above target {target:.3e}")
        if itn >= max_iter:
            raise ConvergenceError(
                f"MINRES did not converge in {max_iter} iterations: "
                f"residual {true_res:.3e}, target {target:.3e}",
                history=history)
        stalled = stalled + 1 if true_res > 0.9 * best else 0
        best = min(best, true_res)
        if used == 0 or stalled >= 2:
            break
    raise SolverError(
        f"MINRES stagnated after {itn} iterations: true residual "
        f"{float(np.linalg.norm(b - A.matvec(x))):.3e} will not reach "
        f"target {target:.3e}")


class BlockJacobiPreconditioner:
    """SPD preconditioner from |diagonal blocks| of a symmetric matrix.

    Blocks are made positive definite through an eigenvalue absolute value;
    intended for the face-block structure of the condensed trace system.
    Optional: never enabled by default.
    """

    def __init__(self, A, block_size):
        n = A.dim
        if n % block_size:
            raise ValueError("matrix dimension not a multiple of block size")
        nb = n // block_size
        dense = A.csr.toarray() if n <= block_size else None
        blocks = np.empty((nb, block_size, block_size))
        for i in range(nb):
            sl = slice(i * block_size, (i + 1) * block_size)
            blk = dense[sl, sl] if dense is not None \
                else A.csr[sl, sl].toarray()
            blocks[i] = 0.5 * (blk + blk.T)
        lam, vec = np.linalg.eigh(blocks)
        lam = np.abs(lam)
        lam = np.maximum(lam, 1e-14 * np.maximum(lam.max(axis=1), 1.0)[:, None])
        self.vec = vec                  # (nb, bs, bs)
        self.lam = lam                  # (nb, bs)
        self.block_size = block_size

    def solve(self, r):
        seg = r.reshape(-1, self.block_size)
        tmp = np.einsum("bij,bi->bj", self.vec, seg) / self.lam
        return np.einsum("bij,bj->bi", self.vec, tmp).reshape(r.shape)
