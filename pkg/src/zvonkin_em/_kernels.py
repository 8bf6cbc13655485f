"""Compiled inner loops.

Every coefficient evaluation in the package goes through these functions so
that the Python API and the chain kernel produce bit-identical numbers.

Function specs are encoded as a float table ``terms`` of shape (T, 4) with
rows ``[code, p0, p1, p2]`` plus a stack of matrices ``mats`` (M, d, d)
referenced by index from ``p0``.
"""
import math

import numpy as np
from numba import njit

# vector-field term codes
LINEAR = 0
HOLDER_SINE = 1
BUMP = 2
SINE = 3
# matrix-field term codes
CONST_MATRIX = 10
DIAG_SINE_MATRIX = 11

MODE_TRANSFORMED = 0
MODE_NAIVE = 1

STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_EXCURSION = 2
STATUS_NOCONVERGE = 3


@njit(cache=True, nogil=True, inline="always")
def vec_field(terms, mats, x, out):
    d = x.shape[0]
    for m in range(d):
        out[m] = 0.0
    for t in range(terms.shape[0]):
        code = int(terms[t, 0])
        if code == LINEAR:
            A = mats[int(terms[t, 1])]
            for m in range(d):
                acc = 0.0
                for j in range(d):
                    acc += A[m, j] * x[j]
                out[m] += acc
        elif code == HOLDER_SINE:
            amp = terms[t, 1]
            alpha = terms[t, 2]
            for m in range(d):
                out[m] += amp * math.pow(abs(math.sin(x[m])), alpha)
        elif code == BUMP:
            height = terms[t, 1]
            hw = terms[t, 2]
            if d == 1:
                # left-limit representative at the jumps: indicator of (-hw, hw]
                inside = x[0] > -hw and x[0] <= hw
            else:
                r2 = 0.0
                for m in range(d):
                    r2 += x[m] * x[m]
                inside = r2 <= hw * hw
            if inside:
                out[0] += height
        elif code == SINE:
            amp = terms[t, 1]
            freq = terms[t, 2]
            for m in range(d):
                out[m] += amp * math.sin(freq * x[m])


@njit(cache=True, nogil=True, inline="always")
def mat_field(terms, mats, x, out):
    d = x.shape[0]
    for i in range(d):
        for j in range(d):
            out[i, j] = 0.0
    for t in range(terms.shape[0]):
        code = int(terms[t, 0])
        if code == CONST_MATRIX:
            A = mats[int(terms[t, 1])]
            for i in range(d):
                for j in range(d):
                    out[i, j] += A[i, j]
        elif code == DIAG_SINE_MATRIX:
            base = terms[t, 1]
            amp = terms[t, 2]
            freq = terms[t, 3]
            for i in range(d):
                out[i, i] += base + amp * math.sin(freq * x[i])


@njit(cache=True, nogil=True)
def vec_field_batch(terms, mats, X):
    out = np.empty_like(X)
    for i in range(X.shape[0]):
        vec_field(terms, mats, X[i], out[i])
    return out


@njit(cache=True, nogil=True)
def mat_field_batch(terms, mats, X):
    n, d = X.shape
    out = np.empty((n, d, d))
    for i in range(n):
        mat_field(terms, mats, X[i], out[i])
    return out


@njit(cache=True, nogil=True, inline="always")
def _locate(xa, radius, h, n):
    s = (xa + radius) / h
    ood = False
    if s < 0.0:
        s = 0.0
        ood = True
    elif s > n - 1:
        s = n - 1.0
        ood = True
    i = int(math.floor(s))
    if i >= n - 1:
        i = n - 2
    return i, s - i, ood


@njit(cache=True, nogil=True, inline="always")
def interp(x, radius, h, n, uflat, gflat, u_out, g_out):
    """Multilinear interpolation of node data; constant extension outside.

    ``uflat`` is (n**dim, d) and ``gflat`` is (n**dim, d*d) in C node order.
    Returns True when ``x`` fell outside the grid box.
    """
    du = uflat.shape[1]
    dg = gflat.shape[1]
    if x.shape[0] == 1:
        i, f, ood = _locate(x[0], radius, h, n)
        for m in range(du):
            u_out[m] = (1.0 - f) * uflat[i, m] + f * uflat[i + 1, m]
        for m in range(dg):
            g_out[m] = (1.0 - f) * gflat[i, m] + f * gflat[i + 1, m]
        return ood
    i, f, ood0 = _locate(x[0], radius, h, n)
    j, g, ood1 = _locate(x[1], radius, h, n)
    w00 = (1.0 - f) * (1.0 - g)
    w01 = (1.0 - f) * g
    w10 = f * (1.0 - g)
    w11 = f * g
    n00 = i * n + j
    n10 = n00 + n
    for m in range(du):
        u_out[m] = (w00 * uflat[n00, m] + w01 * uflat[n00 + 1, m]
                    + w10 * uflat[n10, m] + w11 * uflat[n10 + 1, m])
    for m in range(dg):
        g_out[m] = (w00 * gflat[n00, m] + w01 * gflat[n00 + 1, m]
                    + w10 * gflat[n10, m] + w11 * gflat[n10 + 1, m])
    return ood0 or ood1


@njit(cache=True, nogil=True, inline="always")
def interp_u(x, radius, h, n, uflat, u_out):
    """Value-only variant of :func:`interp`."""
    du = uflat.shape[1]
    if x.shape[0] == 1:
        i, f, ood = _locate(x[0], radius, h, n)
        for m in range(du):
            u_out[m] = (1.0 - f) * uflat[i, m] + f * uflat[i + 1, m]
        return ood
    i, f, ood0 = _locate(x[0], radius, h, n)
    j, g, ood1 = _locate(x[1], radius, h, n)
    w00 = (1.0 - f) * (1.0 - g)
    w01 = (1.0 - f) * g
    w10 = f * (1.0 - g)
    w11 = f * g
    n00 = i * n + j
    n10 = n00 + n
    for m in range(du):
        u_out[m] = (w00 * uflat[n00, m] + w01 * uflat[n00 + 1, m]
                    + w10 * uflat[n10, m] + w11 * uflat[n10 + 1, m])
    return ood0 or ood1


@njit(cache=True, nogil=True, inline="always")
def _phi_inverse_into(y, radius, h, n, uflat, gflat, tol, max_iter, x_out, u, g):
    d = y.shape[0]
    for m in range(d):
        x_out[m] = y[m]
    hits = 0
    for it in range(1, max_iter + 1):
        if interp_u(x_out, radius, h, n, uflat, u):
            hits += 1
        step = 0.0
        for m in range(d):
            xn = y[m] - u[m]
            diff = xn - x_out[m]
            step += diff * diff
            x_out[m] = xn
        if math.sqrt(step) <= tol:
            return it, hits
    return -1, hits


@njit(cache=True, nogil=True)
def phi_inverse_point(y, radius, h, n, uflat, gflat, tol, max_iter, x_out):
    """Fixed point x <- y - u(x) started at x = y.

    Returns (iterations, out_of_domain_hits); iterations = -1 on failure.
    """
    d = y.shape[0]
    return _phi_inverse_into(y, radius, h, n, uflat, gflat, tol, max_iter, x_out,
                             np.empty(d), np.empty(d * d))


@njit(cache=True, nogil=True)
def phi_inverse_batch(Y, radius, h, n, uflat, gflat, tol, max_iter):
    X = np.empty_like(Y)
    hits = 0
    for i in range(Y.shape[0]):
        it, hh = phi_inverse_point(Y[i], radius, h, n, uflat, gflat, tol,
                                   max_iter, X[i])
        hits += hh
        if it < 0:
            return X, i, hits
    return X, -1, hits


@njit(cache=True, nogil=True)
def phi_batch(X, radius, h, n, uflat, gflat):
    d = X.shape[1]
    Y = np.empty_like(X)
    u = np.empty(d)
    g = np.empty(d * d)
    hits = 0
    for i in range(X.shape[0]):
        if interp(X[i], radius, h, n, uflat, gflat, u, g):
            hits += 1
        for m in range(d):
            Y[i, m] = X[i, m] + u[m]
    return Y, hits


@njit(cache=True, nogil=True, inline="always")
def coefficients(y, mode, lam, radius, h, n, uflat, gflat, tol, max_iter,
                 b1_terms, b1_mats, b2_terms, b2_mats, s_terms, s_mats,
                 drift, diff, x, b2x, sig, u, g):
    """Drift and diffusion at ``y`` for the transformed or the naive scheme.

    ``x, b2x, u`` (length d), ``sig`` (d, d) and ``g`` (d*d) are scratch.
    Returns (status, out_of_domain_hits, preimage_norm).
    """
    d = y.shape[0]
    if mode == MODE_NAIVE:
        vec_field(b1_terms, b1_mats, y, drift)
        vec_field(b2_terms, b2_mats, y, b2x)
        for m in range(d):
            drift[m] += b2x[m]
        mat_field(s_terms, s_mats, y, diff)
        nrm = 0.0
        for m in range(d):
            nrm += y[m] * y[m]
        return STATUS_OK, 0, math.sqrt(nrm)

    it, hits = _phi_inverse_into(y, radius, h, n, uflat, gflat, tol, max_iter, x, u, g)
    if it < 0:
        return STATUS_NOCONVERGE, hits, 0.0
    if interp(x, radius, h, n, uflat, gflat, u, g):
        hits += 1
    vec_field(b2_terms, b2_mats, x, b2x)
    mat_field(s_terms, s_mats, x, sig)
    for m in range(d):
        acc = lam * u[m] + b2x[m]
        for j in range(d):
            acc += g[m * d + j] * b2x[j]
        drift[m] = acc
    for i in range(d):
        for j in range(d):
            acc = sig[i, j]
            for k in range(d):
                acc += g[i * d + k] * sig[k, j]
            diff[i, j] = acc
    nrm = 0.0
    for m in range(d):
        nrm += x[m] * x[m]
    return STATUS_OK, hits, math.sqrt(nrm)


@njit(cache=True, nogil=True)
def coefficients_batch(Y, mode, lam, radius, h, n, uflat, gflat, tol, max_iter,
                       b1_terms, b1_mats, b2_terms, b2_mats, s_terms, s_mats):
    m_pts, d = Y.shape
    drift = np.empty((m_pts, d))
    diff = np.empty((m_pts, d, d))
    pre = np.empty(m_pts)
    x = np.empty(d)
    b2x = np.empty(d)
    sig = np.empty((d, d))
    u = np.empty(d)
    g = np.empty(d * d)
    hits = 0
    for i in range(m_pts):
        status, hh, pn = coefficients(
            Y[i], mode, lam, radius, h, n, uflat, gflat, tol, max_iter,
            b1_terms, b1_mats, b2_terms, b2_mats, s_terms, s_mats,
            drift[i], diff[i], x, b2x, sig, u, g)
        hits += hh
        pre[i] = pn
        if status != STATUS_OK:
            return drift, diff, pre, i, hits
    return drift, diff, pre, -1, hits


@njit(cache=True, nogil=True, inline="always")
def _chain_loop(d, z, noise, eta, step0, k_burn, thin, samples, n_kept,
                guard, inner_radius,
                mode, lam, radius, h, n, uflat, gflat, tol, max_iter,
                b1_terms, b1_mats, b2_terms, b2_mats, s_terms, s_mats):
    drift = np.empty(d)
    diff = np.empty((d, d))
    x = np.empty(d)
    b2x = np.empty(d)
    sig = np.empty((d, d))
    u = np.empty(d)
    g = np.empty(d * d)
    znew = np.empty(d)
    sq = math.sqrt(eta)
    max_exc = 0.0
    hits = 0
    untrusted = 0
    for s in range(noise.shape[0]):
        k = step0 + s + 1
        status, hh, pn = coefficients(
            z, mode, lam, radius, h, n, uflat, gflat, tol, max_iter,
            b1_terms, b1_mats, b2_terms, b2_mats, s_terms, s_mats,
            drift, diff, x, b2x, sig, u, g)
        hits += hh
        if pn > inner_radius:
            untrusted += 1
        if status != STATUS_OK:
            return status, k, n_kept, max_exc, hits, untrusted
        nrm = 0.0
        finite = True
        for m in range(d):
            acc = 0.0
            for j in range(d):
                acc += diff[m, j] * noise[s, j]
            znew[m] = z[m] + eta * drift[m] + sq * acc
        for m in range(d):
            z[m] = znew[m]
            if not math.isfinite(z[m]):
                finite = False
            nrm += z[m] * z[m]
        if not finite:
            return STATUS_NONFINITE, k, n_kept, max_exc, hits, untrusted
        nrm = math.sqrt(nrm)
        if nrm > max_exc:
            max_exc = nrm
        if nrm > guard:
            return STATUS_EXCURSION, k, n_kept, max_exc, hits, untrusted
        if k > k_burn and (k - k_burn) % thin == 0:
            for m in range(d):
                samples[n_kept, m] = z[m]
            n_kept += 1
    return STATUS_OK, -1, n_kept, max_exc, hits, untrusted


@njit(cache=True, nogil=True)
def chain_block(z, noise, eta, step0, k_burn, thin, samples, n_kept,
                guard, inner_radius,
                mode, lam, radius, h, n, uflat, gflat, tol, max_iter,
                b1_terms, b1_mats, b2_terms, b2_mats, s_terms, s_mats):
    """Advance ``z`` in place through ``noise.shape[0]`` EM steps.

    Step numbering continues from ``step0``; state after step k is retained
    when k > k_burn and (k - k_burn) % thin == 0.
    Returns (status, failing_step, n_kept, max_excursion, ood_hits, untrusted).
    """
    # a literal dimension lets the compiler unroll the small loops (about 2x)
    if z.shape[0] == 1:
        return _chain_loop(1, z, noise, eta, step0, k_burn, thin, samples, n_kept,
                           guard, inner_radius, mode, lam, radius, h, n, uflat, gflat,
                           tol, max_iter, b1_terms, b1_mats, b2_terms, b2_mats,
                           s_terms, s_mats)
    return _chain_loop(z.shape[0], z, noise, eta, step0, k_burn, thin, samples, n_kept,
                       guard, inner_radius, mode, lam, radius, h, n, uflat, gflat,
                       tol, max_iter, b1_terms, b1_mats, b2_terms, b2_mats,
                       s_terms, s_mats)
