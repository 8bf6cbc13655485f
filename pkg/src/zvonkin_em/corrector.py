"""Finite-difference corrector solve and the change of variables it induces.

The corrector u solves, componentwise,

    1/2 <sigma sigma', D^2 u> - lam u + b1 . grad u = -b1

on [-R, R]^d with u = 0 on the boundary. Phi(x) = x + u(x) straightens the
singular drift; the transformed coefficients are

    bhat(y)     = (lam u + (I + grad u) b2)(Phi^{-1}(y))
    sigmahat(y) = ((I + grad u) sigma)(Phi^{-1}(y)).
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from . import _kernels as K
from .errors import (InvalidConstant, IoFailure, LambdaSearchExhausted, LinearSolveFailure,
                     NoConvergence, SingularAssembly, UnsupportedDimension,
                     ValidationError)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Grid:
    dim: int
    radius: float
    n_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise UnsupportedDimension(f"corrector grids support d <= 2, got {self.dim}")
        if self.n_per_axis < 33:
            raise InvalidConstant("n_per_axis must be >= 33")
        if self.radius <= 0:
            raise InvalidConstant("grid radius must be positive")

    @property
    def h(self):
        return 2.0 * self.radius / (self.n_per_axis - 1)

    @property
    def axis(self):
        return -self.radius + np.arange(self.n_per_axis) * self.h

    @property
    def shape(self):
        return (self.n_per_axis,) * self.dim

    @property
    def size(self):
        return self.n_per_axis ** self.dim

    def points(self):
        """All nodes as an (N, dim) array in C order."""
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def boundary_mask(self):
        idx = np.indices(self.shape).reshape(self.dim, -1)
        n = self.n_per_axis
        return np.any((idx == 0) | (idx == n - 1), axis=0)


def default_grid(dim, radius=12.0, n_per_axis=None):
    if n_per_axis is None:
        n_per_axis = 4097 if dim == 1 else 257
    return Grid(dim, radius, n_per_axis)


class Telemetry:
    """Evaluation counters; carry no semantic weight."""

    def __init__(self):
        self._lock = threading.Lock()
        self.evaluations = 0
        self.out_of_domain = 0

    def add(self, evaluations, out_of_domain):
        with self._lock:
            self.evaluations += int(evaluations)
            self.out_of_domain += int(out_of_domain)

    @property
    def ood_fraction(self):
        return self.out_of_domain / self.evaluations if self.evaluations else 0.0


@dataclass(frozen=True, eq=False)
class CorrectorField:
    grid: Grid
    lam: float
    u_values: np.ndarray       # grid.shape + (d,)
    grad_u_values: np.ndarray  # grid.shape + (d, d); [.., m, j] = d u^m / d x_j
    sup_u: float
    sup_grad_u: float
    boundary_policy: str = "ZeroDirichlet"
    telemetry: Telemetry = dc_field(default_factory=Telemetry, compare=False, repr=False)

    def __post_init__(self):
        d = self.grid.dim
        # flat, contiguous copies for the kernels
        object.__setattr__(self, "_uflat", np.ascontiguousarray(
            self.u_values.reshape(self.grid.size, d)))
        object.__setattr__(self, "_gflat", np.ascontiguousarray(
            self.grad_u_values.reshape(self.grid.size, d * d)))

    @property
    def dim(self):
        return self.grid.dim

    def kernel_args(self):
        return (self.grid.radius, self.grid.h, self.grid.n_per_axis, self._uflat, self._gflat)


def _field_from_values(grid, lam, U):
    d = grid.dim
    G = np.empty(grid.shape + (d, d))
    for m in range(d):
        for j in range(d):
            G[..., m, j] = np.gradient(U[..., m], grid.h, axis=j, edge_order=2)
    sup_u = float(np.max(np.linalg.norm(U.reshape(-1, d), axis=1)))
    Gf = G.reshape(-1, d, d)
    if d == 1:
        sup_g = float(np.max(np.abs(Gf)))
    else:
        sup_g = float(np.max(np.linalg.norm(Gf, ord=2, axis=(1, 2))))
    return CorrectorField(grid, float(lam), U, G, sup_u, sup_g)


def zero_field(grid, lam=1.0):
    return _field_from_values(grid, lam, np.zeros(grid.shape + (grid.dim,)))


@dataclass
class CorrectorSystem:
    grid: Grid
    lam: float
    matrix: sp.csr_matrix
    rhs: np.ndarray  # (N, d)


def assemble_operator(problem, grid, lam):
    """Discretise 1/2 <a, D^2 .> - lam + b1 . grad with zero Dirichlet rows.

    Second differences are centred (with the 4-point cross stencil for mixed
    terms). The first-order term is upwinded at nodes within one cell of a
    jump of b1 and centred elsewhere.
    """
    if problem.dim != grid.dim:
        raise UnsupportedDimension(f"problem dim {problem.dim} vs grid dim {grid.dim}")
    if problem.dim > 2:
        raise UnsupportedDimension("corrector solve supports d <= 2")
    if lam <= 0:
        raise InvalidConstant("lambda must be positive")
    d, n, h = grid.dim, grid.n_per_axis, grid.h
    X = grid.points()
    N = len(X)
    b1 = problem.b1(X)
    S = problem.sigma(X)
    A = S @ np.swapaxes(S, 1, 2)
    boundary = grid.boundary_mask()
    interior = np.flatnonzero(~boundary)

    near_jump = np.zeros(N, dtype=bool)
    radii = np.linalg.norm(X, axis=1)
    for r in problem.b1.discontinuities():
        near_jump |= np.abs(radii - r) <= h * (1 + 1e-12)

    strides = [n ** (d - 1 - j) for j in range(d)]
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    i = interior
    diag = np.full(i.size, -float(lam))
    for j in range(d):
        a_jj = A[i, j, j]
        add(i, i + strides[j], 0.5 * a_jj / h**2)
        add(i, i - strides[j], 0.5 * a_jj / h**2)
        diag -= a_jj / h**2
        bj = b1[i, j]
        up = near_jump[i]
        # centred
        c = ~up
        add(i[c], i[c] + strides[j], bj[c] / (2 * h))
        add(i[c], i[c] - strides[j], -bj[c] / (2 * h))
        # upwind: forward difference where bj > 0, backward where bj < 0
        fw = up & (bj > 0)
        bw = up & (bj < 0)
        add(i[fw], i[fw] + strides[j], bj[fw] / h)
        diag[fw] -= bj[fw] / h
        add(i[bw], i[bw] - strides[j], -bj[bw] / h)
        diag[bw] += bj[bw] / h
    if d == 2:
        # 1/2 * 2 * a_01 * u_xy, cross stencil
        a01 = A[i, 0, 1]
        w = a01 / (4 * h**2)
        s0, s1 = strides
        add(i, i + s0 + s1, w)
        add(i, i - s0 - s1, w)
        add(i, i + s0 - s1, -w)
        add(i, i - s0 + s1, -w)
    add(i, i, diag)
    bnd = np.flatnonzero(boundary)
    add(bnd, bnd, np.ones(bnd.size))

    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N))
    M.sum_duplicates()
    if np.any(M.diagonal()[interior] >= 0):
        raise SingularAssembly("non-negative diagonal entry; refine the grid")
    rhs = -b1
    rhs[boundary] = 0.0
    return CorrectorSystem(grid, float(lam), M, rhs)


def solve_system(system, rhs=None, rtol=1e-10):
    """Solve ``system.matrix @ U = rhs`` for every column of ``rhs``."""
    M = system.matrix
    F = system.rhs if rhs is None else np.asarray(rhs, dtype=float).reshape(M.shape[0], -1)
    if not np.any(F):
        return np.zeros_like(F)
    if system.grid.dim == 1:
        N = M.shape[0]
        ab = np.zeros((3, N))
        ab[0, 1:] = M.diagonal(1)
        ab[1] = M.diagonal()
        ab[2, :-1] = M.diagonal(-1)
        U = solve_banded((1, 1), ab, F)
    else:
        U = splu(M.tocsc()).solve(F)
    if not np.all(np.isfinite(U)):
        raise LinearSolveFailure("NaN detected in corrector solution")
    res = np.linalg.norm(M @ U - F) / np.linalg.norm(F)
    if res > rtol:
        raise LinearSolveFailure(f"relative residual {res:.3g} exceeds {rtol:g}")
    return U


def solve_corrector(problem, grid, lam):
    """Solve the corrector equation; does not enforce the gradient bound."""
    system = assemble_operator(problem, grid, lam)
    U = solve_system(system)
    U[grid.boundary_mask()] = 0.0  # elimination leaves ~1e-24 residue on Dirichlet rows
    U = U.reshape(grid.shape + (grid.dim,))
    return _field_from_values(grid, lam, U)


def select_lambda(problem, grid, target=0.4, lambda0=1.0, max_doublings=40):
    """Double lambda from ``lambda0`` until sup |grad u| <= target."""
    if not 0.0 < target < 0.5:
        raise ValidationError(f"target must lie in (0, 0.5), got {target}")
    if lambda0 <= 0:
        raise ValidationError("lambda0 must be positive")
    lam = float(lambda0)
    history = []
    for _ in range(max_doublings + 1):
        fld = solve_corrector(problem, grid, lam)
        history.append((lam, fld.sup_grad_u))
        if fld.sup_grad_u <= target:
            return lam, fld
        lam *= 2.0
    raise LambdaSearchExhausted(
        f"sup|grad u| stayed above {target} after {max_doublings} doublings: {history[-3:]}")


def _points(x, dim):
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=float)))
    if X.shape[1] != dim:
        raise ValidationError(f"expected points of dimension {dim}, got {X.shape[1]}")
    return X


def eval_corrector(field, x):
    """(u(x), grad u(x)) by multilinear interpolation; constant extension outside the box."""
    X = _points(x, field.dim)
    d = field.dim
    R, h, n, uf, gf = field.kernel_args()
    U = np.empty((len(X), d))
    G = np.empty((len(X), d * d))
    hits = 0
    for k in range(len(X)):
        hits += K.interp(X[k], R, h, n, uf, gf, U[k], G[k])
    field.telemetry.add(len(X), hits)
    G = G.reshape(len(X), d, d)
    if np.ndim(x) == 1:
        return U[0], G[0]
    return U, G


def phi(field, x):
    """Phi(x) = x + u(x)."""
    X = _points(x, field.dim)
    Y, hits = K.phi_batch(X, *field.kernel_args())
    field.telemetry.add(len(X), hits)
    return Y[0] if np.ndim(x) == 1 else Y


def phi_inverse(field, y, tol=1e-10, max_iter=100):
    """Phi^{-1}(y) via the contraction x <- y - u(x), started at x = y."""
    Y = _points(y, field.dim)
    X, fail, hits = K.phi_inverse_batch(Y, *field.kernel_args(), tol, max_iter)
    field.telemetry.add(len(Y), hits)
    if fail >= 0:
        raise NoConvergence(f"Phi^-1 did not converge in {max_iter} iterations "
                            f"(point index {fail}, sup|grad u| = {field.sup_grad_u:.3g})")
    return X[0] if np.ndim(y) == 1 else X


class TransformedCoefficients:
    """bhat and sigmahat of the transformed SDE, backed by a solved corrector."""

    mode = K.MODE_TRANSFORMED

    def __init__(self, problem, field, inner_radius=None, tol=1e-10, max_iter=100):
        R, h = field.grid.radius, field.grid.h
        if inner_radius is None:
            inner_radius = R - max(4.0, R / 3.0)
        if not 0 < inner_radius <= R - 2 * h:
            raise ValidationError(f"inner_radius must lie in (0, R - 2h], got {inner_radius}")
        self.problem = problem
        self.field = field
        self.inner_radius = float(inner_radius)
        self.tol = tol
        self.max_iter = max_iter
        self.untrusted = 0

    @property
    def dim(self):
        return self.problem.dim

    @property
    def lam(self):
        return self.field.lam

    @property
    def Lambda1(self):
        return 0.5 * self.problem.lambda_sigma

    @property
    def Lambda2(self):
        return 2.0 / self.problem.lambda_sigma

    @property
    def grid_radius(self):
        return self.field.grid.radius

    def kernel_args(self):
        p = self.problem
        d = p.dim
        return (self.mode, self.field.lam, *self.field.kernel_args(), self.tol, self.max_iter,
                *p.b1.encode(d), *p.b2.encode(d), *p.sigma.encode(d))

    def evaluate(self, y):
        """(bhat, sigmahat) at a point or batch of points."""
        Y = _points(y, self.dim)
        drift, diff, pre, fail, hits = K.coefficients_batch(Y, *self.kernel_args())
        self.field.telemetry.add(len(Y), hits)
        if fail >= 0:
            raise NoConvergence(f"Phi^-1 did not converge at point index {fail}")
        self.untrusted += int(np.sum(pre > self.inner_radius))
        if np.ndim(y) == 1:
            return drift[0], diff[0]
        return drift, diff

    def drift(self, y):
        return self.evaluate(y)[0]

    def diffusion(self, y):
        return self.evaluate(y)[1]


def transformed_drift(tc, y):
    return tc.drift(y)


def transformed_diffusion(tc, y):
    return tc.diffusion(y)


# --- cache file -------------------------------------------------------------

def save_field(field, path):
    """Text table: one header line, then one row per node (C order) holding
    the d components of u followed by the d*d entries of grad u (row-major)."""
    g = field.grid
    d = g.dim
    header = (f"zvonkin-corrector v{FORMAT_VERSION} dim={d} R={g.radius!r} n={g.n_per_axis} "
              f"lambda={field.lam!r}")
    body = np.concatenate([field.u_values.reshape(-1, d),
                           field.grad_u_values.reshape(-1, d * d)], axis=1)
    try:
        np.savetxt(path, body, fmt="%.17g", header=header)
    except OSError as exc:
        raise IoFailure(path, str(exc)) from exc


def load_field(path):
    try:
        with open(path) as fh:
            header = fh.readline()
        body = np.loadtxt(path, ndmin=2)
    except OSError as exc:
        raise IoFailure(path, str(exc)) from exc
    tokens = header.lstrip("# ").split()
    if len(tokens) < 2 or tokens[0] != "zvonkin-corrector" or tokens[1] != f"v{FORMAT_VERSION}":
        raise IoFailure(path, f"unrecognised corrector header {header.strip()!r}")
    meta = dict(t.split("=", 1) for t in tokens[2:])
    grid = Grid(int(meta["dim"]), float(meta["R"]), int(meta["n"]))
    d = grid.dim
    if body.shape != (grid.size, d + d * d):
        raise IoFailure(path, f"body shape {body.shape} does not match header")
    U = body[:, :d].reshape(grid.shape + (d,))
    G = body[:, d:].reshape(grid.shape + (d, d))
    sup_u = float(np.max(np.linalg.norm(U.reshape(-1, d), axis=1)))
    sup_g = float(np.max(np.linalg.norm(G.reshape(-1, d, d), ord=2, axis=(1, 2))))
    return CorrectorField(grid, float(meta["lambda"]), U, G, sup_u, sup_g)

