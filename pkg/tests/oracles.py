"""Independent oracles: naive-loop quadrature of the bilinear forms and a
monolithic dense solver, kept deliberately separate from the vectorized
assembly paths they check."""

import numpy as np

from hdgch.polybasis import SegmentBasis, TriangleBasis, cell_maps, \
    segment_rule, triangle_rule


def quadrature_A(cell, mesh, bases, alpha, trial, test, exactness=None):
    """Evaluate the mixed bilinear form on one cell by direct quadrature
    of each term, using its own (finer) rules and plain loops."""
    k = bases.k
    q, u, uh = trial
    r, w, mu = test
    nV, nW, nF = bases.n_v, bases.n_w, bases.n_f
    tri_v = TriangleBasis(k)
    tri_w = TriangleBasis(k + 1)
    seg = SegmentBasis(k)
    vol = triangle_rule(exactness or (2 * k + 6))
    fr = segment_rule(exactness or (2 * k + 8))

    jac, jinv, detj = cell_maps(mesh)
    J, Ji, dJ = jac[cell], jinv[cell], detj[cell]
    v0 = mesh.vertices[mesh.cells[cell, 0]]
    s = np.sqrt(dJ)

    val = 0.0
    vv = tri_v.eval(vol.points)
    gv = tri_v.grad(vol.points)
    wv = tri_w.eval(vol.points)
    for qi, wq in enumerate(vol.weights):
        qx = (q[:nV] @ vv[qi]) / s
        qy = (q[nV:] @ vv[qi]) / s
        rx = (r[:nV] @ vv[qi]) / s
        ry = (r[nV:] @ vv[qi]) / s
        uval = (u @ wv[qi]) / s
        wval = (w @ wv[qi]) / s
        gphys = gv[qi] @ Ji / s                     # (nV, 2)
        div_r = (r[:nV] @ gphys[:, 0]) + (r[nV:] @ gphys[:, 1])
        div_q = (q[:nV] @ gphys[:, 0]) + (q[nV:] @ gphys[:, 1])
        val += dJ * wq * (qx * rx + qy * ry - uval * div_r + div_q * wval)

    for lf in range(3):
        f = mesh.cell_faces[cell, lf]
        sign = mesh.cell_face_signs[cell, lf]
        nE = mesh.face_normals[f] * sign
        ell = mesh.face_lengths[f]
        p0 = mesh.vertices[mesh.faces[f, 0]]
        p1 = mesh.vertices[mesh.faces[f, 1]]
        uh_f = uh[lf * nF:(lf + 1) * nF]
        mu_f = mu[lf * nF:(lf + 1) * nF]
        # face L2 projections of the cell traces, via quadrature
        pu = np.zeros(nF)
        pw = np.zeros(nF)
        for qi, wq in enumerate(fr.weights):
            pt = p0 + fr.points[qi] * (p1 - p0)
            ref = Ji @ (pt - v0)
            wvals = tri_w.eval(ref[None, :])[0] / s
            mvals = seg.eval(np.array([fr.points[qi]]))[0] / np.sqrt(ell)
            pu += ell * wq * (u @ wvals) * mvals
            pw += ell * wq * (w @ wvals) * mvals
        for qi, wq in enumerate(fr.weights):
            pt = p0 + fr.points[qi] * (p1 - p0)
            ref = Ji @ (pt - v0)
            vvals = tri_v.eval(ref[None, :])[0] / s
            wvals = tri_w.eval(ref[None, :])[0] / s
            mvals = seg.eval(np.array([fr.points[qi]]))[0] / np.sqrt(ell)
            uh_v = uh_f @ mvals
            mu_v = mu_f @ mvals
            rn = (r[:nV] @ vvals) * nE[0] + (r[nV:] @ vvals) * nE[1]
            qn = (q[:nV] @ vvals) * nE[0] + (q[nV:] @ vvals) * nE[1]
            stab = (alpha / ell) * ((pu @ mvals) - uh_v) \
                * ((pw @ mvals) - mu_v)
            val += ell * wq * (uh_v * rn - qn * mu_v + stab)
    return val


def quadrature_B(state, beta, tau_c, mesh, bases):
    """Convection functionals by plain loops over cells, faces and points
    (same quadrature rules as the production path, independent code)."""
    u, uhat = state
    k = bases.k
    nF = bases.n_f
    tri_w = TriangleBasis(k + 1)
    seg = SegmentBasis(k)
    vol = bases.cell_rule
    fr = bases.face_rule
    jac, jinv, detj = cell_maps(mesh)
    wvol = tri_w.eval(vol.points)
    gvol = tri_w.grad(vol.points)

    bw = np.zeros((mesh.num_cells, bases.n_w))
    bm = np.zeros((mesh.num_faces, nF))
    for c in range(mesh.num_cells):
        s = np.sqrt(detj[c])
        v0 = mesh.vertices[mesh.cells[c, 0]]
        for qi, wq in enumerate(vol.weights):
            pt = v0 + jac[c] @ vol.points[qi]
            bx, by = beta(pt[0], pt[1])
            uval = (u[c] @ wvol[qi]) / s
            g = gvol[qi] @ jinv[c] / s
            bw[c] -= detj[c] * wq * uval * (bx * g[:, 0] + by * g[:, 1])
        for lf in range(3):
            f = mesh.cell_faces[c, lf]
            sign = mesh.cell_face_signs[c, lf]
            nE = mesh.face_normals[f] * sign
            ell = mesh.face_lengths[f]
            p0 = mesh.vertices[mesh.faces[f, 0]]
            p1 = mesh.vertices[mesh.faces[f, 1]]
            for qi, wq in enumerate(fr.weights):
                pt = p0 + fr.points[qi] * (p1 - p0)
                bx, by = beta(pt[0], pt[1])
                bn = bx * nE[0] + by * nE[1]
                ref = jinv[c] @ (pt - v0)
                wvals = tri_w.eval(ref[None, :])[0] / s
                mvals = seg.eval(np.array([fr.points[qi]]))[0] / np.sqrt(ell)
                uh_v = uhat[f] @ mvals
                bw[c] += ell * wq * bn * uh_v * wvals
                if tau_c is not None:
                    jump = (u[c] @ wvals) - uh_v
                    bw[c] += ell * wq * tau_c * jump * wvals
                    bm[f] -= ell * wq * tau_c * jump * mvals
    if tau_c is None:
        return bw
    return bw, bm


def dense_solve_step(stepper, prev, b_phi, m2, b_G_dense, x_lin):
    """Monolithic dense solve of one Newton-linearized step, scattering
    the same cell blocks into a full matrix and using LAPACK directly."""
    st = stepper
    nc, ni, ng = st.mesh.num_cells, st.ni, st.ng
    C, cube = st._cubic(x_lin[:, st.iu])
    K_II = st.K_II_const.copy()
    K_II[:, st.iu, st.iu] -= C
    b_I = np.zeros((nc, ni))
    b_u = 2.0 * cube + prev.u
    if m2 is not None:
        b_u = b_u + m2
    b_I[:, st.iu] = -b_u
    b_I[:, st.iphi] = b_phi

    N = nc * ni + st.nglob
    K = np.zeros((N, N))
    b = np.zeros(N)
    for c in range(nc):
        sl = slice(c * ni, (c + 1) * ni)
        K[sl, sl] = K_II[c]
        gd = st.gmap[c] + nc * ni
        K[sl.start:sl.stop, gd] += st.K_IG[c]
        K[np.ix_(gd, range(sl.start, sl.stop))] += st.K_IG[c].T
        K[np.ix_(gd, gd)] += st.K_GG[c]
        b[sl] = b_I[c]
    if b_G_dense is not None:
        b[nc * ni:] += b_G_dense
    assert np.abs(K - K.T).max() <= 1e-12 * max(np.abs(K).max(), 1.0)
    x = np.linalg.solve(K, b)
    return x[:nc * ni].reshape(nc, ni), x[nc * ni:]
