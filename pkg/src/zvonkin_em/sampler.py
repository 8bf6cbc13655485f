"""Euler-Maruyama chains, ensembles and the pull-back to original coordinates."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels as K
from .corrector import TransformedCoefficients, phi, phi_inverse
from .errors import (Case1Unsupported, ExcursionGuard, InvalidConstant, IoFailure,
                     NoConvergence, NonFiniteState, RuntimeFailure, ValidationError)
from .model import CASE1

TRANSFORMED = "Transformed"
PULLED_BACK = "PulledBack"

BLOCK = 1 << 16  # EM steps per noise block


@dataclass(frozen=True)
class ChainConfig:
    eta: float
    k_total: int
    k_burn: int
    thin: int = 1
    z0: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.eta <= 0.5:
            raise InvalidConstant(f"eta must lie in (0, 0.5], got {self.eta}")
        if not 0 <= self.k_burn < self.k_total:
            raise InvalidConstant("need 0 <= k_burn < k_total")
        if self.thin < 1:
            raise InvalidConstant("thin must be >= 1")

    @classmethod
    def from_times(cls, eta, T_burn=20.0, T_run=2000.0, z0=None, seed=0, thin=None):
        """Physical-time budget: k_burn = ceil(T_burn/eta), k_total = ceil(T_run/eta)."""
        if thin is None:
            thin = max(1, math.floor(1.0 / (10.0 * eta)))
        return cls(eta=eta, k_total=math.ceil(T_run / eta - 1e-9),
                   k_burn=math.ceil(T_burn / eta - 1e-9), thin=thin,
                   z0=None if z0 is None else tuple(np.asarray(z0, dtype=float).ravel()),
                   seed=seed)

    @property
    def n_retained(self):
        return (self.k_total - self.k_burn) // self.thin


@dataclass
class SampleSet:
    samples: np.ndarray  # (n, dim)
    eta: float
    n_chains: int
    coordinates: str
    seed: int
    problem_id: str = ""
    chain_ids: Optional[np.ndarray] = None
    telemetry: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        if not np.all(np.isfinite(self.samples)):
            raise NonFiniteState("sample set contains non-finite values")
        if self.coordinates not in (TRANSFORMED, PULLED_BACK):
            raise ValidationError(f"unknown coordinates tag {self.coordinates!r}")

    @property
    def dim(self):
        return self.samples.shape[1]

    def __len__(self):
        return len(self.samples)

    def chain(self, i):
        return self.samples[self.chain_ids == i]


@dataclass
class ChainResult:
    final_state: np.ndarray
    samples: np.ndarray
    telemetry: dict


def noise_stream(seed):
    """Counter-based Philox stream; the k-th d-vector drawn drives step k."""
    return np.random.Generator(np.random.Philox(key=int(seed) % (1 << 128)))


def chain_seed(master_seed, index):
    """Per-chain seed derived from (master_seed, chain index)."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def em_step(bhat, sigmahat, z, eta, xi):
    """z + eta * bhat(z) + sqrt(eta) * sigmahat(z) @ xi."""
    if eta <= 0:
        raise InvalidConstant("eta must be positive")
    z = np.asarray(z, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if xi.shape != z.shape:
        raise ValidationError(f"noise shape {xi.shape} does not match state {z.shape}")
    out = z + eta * np.asarray(bhat(z)) + math.sqrt(eta) * (np.asarray(sigmahat(z)) @ xi)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState(f"non-finite state {out}")
    return out


class NaiveCoefficients:
    """Original coefficients (b1 + b2, sigma) for the direct EM baseline."""

    mode = K.MODE_NAIVE

    def __init__(self, problem, guard_radius=120.0):
        if problem.case_tag == CASE1:
            raise Case1Unsupported(
                "direct EM is refused for Case 1: pointwise b1 values are meaningless")
        self.problem = problem
        self.grid_radius = guard_radius / 10.0
        self.inner_radius = math.inf

    @property
    def dim(self):
        return self.problem.dim

    def kernel_args(self):
        p = self.problem
        d = p.dim
        dummy = np.zeros((2 ** d, d))
        return (self.mode, 0.0, 1.0, 2.0, 2, dummy, np.zeros((2 ** d, d * d)), 1e-10, 1,
                *p.b1.encode(d), *p.b2.encode(d), *p.sigma.encode(d))

    def drift(self, x):
        return self.problem.drift(x)

    def diffusion(self, x):
        return self.problem.sigma(x)


def _initial_state(coeffs, cfg):
    if cfg.z0 is not None:
        z = np.array(cfg.z0, dtype=float)
        if z.shape != (coeffs.dim,):
            raise ValidationError(f"z0 has shape {z.shape}, expected ({coeffs.dim},)")
        return z
    if isinstance(coeffs, TransformedCoefficients):
        return phi(coeffs.field, np.zeros(coeffs.dim))
    return np.zeros(coeffs.dim)


def run_chain(coeffs, cfg):
    """Iterate the EM scheme ``cfg.k_total`` times and keep the thinned tail.

    ``coeffs`` is a :class:`TransformedCoefficients`, a :class:`NaiveCoefficients`,
    or any object with ``dim``, ``drift(z)`` and ``diffusion(z)`` (slow path).
    """
    z = _initial_state(coeffs, cfg)
    d = z.size
    rng = noise_stream(cfg.seed)
    samples = np.empty((cfg.n_retained, d))
    guard = 10.0 * getattr(coeffs, "grid_radius", math.inf)
    fast = hasattr(coeffs, "kernel_args")
    args = coeffs.kernel_args() if fast else None
    inner = getattr(coeffs, "inner_radius", math.inf)

    n_kept = 0
    max_exc = float(np.linalg.norm(z))
    hits = untrusted = 0
    step = 0
    while step < cfg.k_total:
        m = min(BLOCK, cfg.k_total - step)
        noise = rng.standard_normal((m, d))
        if fast:
            status, bad_step, n_kept, exc, hh, uu = K.chain_block(
                z, noise, cfg.eta, step, cfg.k_burn, cfg.thin, samples, n_kept,
                guard, inner, *args)
            hits += hh
            untrusted += uu
            max_exc = max(max_exc, exc)
            if status == K.STATUS_NONFINITE:
                raise NonFiniteState(f"non-finite state at step {bad_step}")
            if status == K.STATUS_EXCURSION:
                raise ExcursionGuard(f"|Z_k| exceeded {guard:g} at step {bad_step}; reduce eta")
            if status == K.STATUS_NOCONVERGE:
                raise NoConvergence(f"Phi^-1 failed at step {bad_step}")
        else:
            for s in range(m):
                k = step + s + 1
                try:
                    z = em_step(coeffs.drift, coeffs.diffusion, z, cfg.eta, noise[s])
                except NonFiniteState as exc:
                    raise NonFiniteState(f"step {k}: {exc}") from None
                nrm = float(np.linalg.norm(z))
                max_exc = max(max_exc, nrm)
                if nrm > guard:
                    raise ExcursionGuard(f"|Z_k| exceeded {guard:g} at step {k}; reduce eta")
                if k > cfg.k_burn and (k - cfg.k_burn) % cfg.thin == 0:
                    samples[n_kept] = z
                    n_kept += 1
        step += m
    if fast and isinstance(coeffs, TransformedCoefficients):
        coeffs.field.telemetry.add(cfg.k_total, hits)
        coeffs.untrusted += untrusted
    return ChainResult(final_state=z, samples=samples[:n_kept],
                       telemetry={"max_excursion": max_exc, "out_of_domain_hits": hits,
                                  "untrusted_evaluations": untrusted,
                                  "evaluations": cfg.k_total})


def n_threads_from_env(default=None):
    raw = os.environ.get("ZVONKIN_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValidationError(f"ZVONKIN_THREADS must be an integer, got {raw!r}") from None
    return default or (os.cpu_count() or 1)


def run_ensemble(coeffs, base_cfg, n_chains, master_seed, problem_id="", n_threads=None):
    """Independent chains with seeds chain_seed(master_seed, i), concatenated in index order."""
    if n_chains < 1:
        raise InvalidConstant("n_chains must be >= 1")
    if n_threads is None:
        n_threads = n_threads_from_env()
    cfgs = [replace(base_cfg, seed=chain_seed(master_seed, i)) for i in range(n_chains)]

    def one(i):
        try:
            return run_chain(coeffs, cfgs[i])
        except RuntimeFailure as exc:
            raise type(exc)(f"chain {i}: {exc}") from exc

    if n_threads > 1 and n_chains > 1:
        with ThreadPoolExecutor(max_workers=min(n_threads, n_chains)) as pool:
            results = list(pool.map(one, range(n_chains)))
    else:
        results = [one(i) for i in range(n_chains)]

    samples = np.concatenate([r.samples for r in results])
    ids = np.concatenate([np.full(len(r.samples), i) for i, r in enumerate(results)])
    telemetry = {
        "max_excursion": max(r.telemetry["max_excursion"] for r in results),
        "out_of_domain_hits": sum(r.telemetry["out_of_domain_hits"] for r in results),
        "untrusted_evaluations": sum(r.telemetry["untrusted_evaluations"] for r in results),
        "evaluations": sum(r.telemetry["evaluations"] for r in results),
    }
    return SampleSet(samples=samples, eta=base_cfg.eta, n_chains=n_chains,
                     coordinates=TRANSFORMED, seed=int(master_seed), problem_id=problem_id,
                     chain_ids=ids, telemetry=telemetry)


def pull_back(field_, s, tol=1e-10, max_iter=100):
    """Map transformed samples through Phi^{-1}."""
    if s.coordinates != TRANSFORMED:
        raise ValidationError("pull_back expects a Transformed sample set")
    try:
        X = phi_inverse(field_, s.samples, tol=tol, max_iter=max_iter)
    except NoConvergence as exc:
        raise NoConvergence(f"pull_back: {exc}") from None
    return replace(s, samples=np.atleast_2d(X).reshape(s.samples.shape), coordinates=PULLED_BACK)


def naive_chain(problem, cfg, n_chains=1, master_seed=None, n_threads=None):
    """Direct EM on (b1 + b2, sigma); Case 2 only. Output is in original coordinates.

    With ``master_seed`` given, runs an ensemble exactly like :func:`run_ensemble`.
    """
    coeffs = NaiveCoefficients(problem)
    if master_seed is None:
        res = run_chain(coeffs, cfg)
        return SampleSet(samples=res.samples, eta=cfg.eta, n_chains=1, coordinates=PULLED_BACK,
                         seed=cfg.seed, problem_id=problem.name,
                         chain_ids=np.zeros(len(res.samples), dtype=int),
                         telemetry=res.telemetry)
    s = run_ensemble(coeffs, cfg, n_chains, master_seed, problem.name, n_threads)
    return replace(s, coordinates=PULLED_BACK)


def write_samples(s, path):
    """Columnar text: a header line then one sample per line."""
    header = (f"dim={s.dim} eta={s.eta!r} seed={s.seed} coordinates={s.coordinates} "
              f"n_chains={s.n_chains} problem_id={s.problem_id or '-'}")
    try:
        np.savetxt(path, s.samples, fmt="%.17g", header=header)
    except OSError as exc:
        raise IoFailure(path, str(exc)) from exc


def read_samples(path):
    try:
        with open(path) as fh:
            header = fh.readline()
        data = np.loadtxt(path, ndmin=2)
    except OSError as exc:
        raise IoFailure(path, str(exc)) from exc
    meta = dict(t.split("=", 1) for t in header.lstrip("# ").split())
    dim = int(meta["dim"])
    data = data.reshape(-1, dim)
    return SampleSet(samples=data, eta=float(meta["eta"]), n_chains=int(meta["n_chains"]),
                     coordinates=meta["coordinates"], seed=int(meta["seed"]),
                     problem_id="" if meta["problem_id"] == "-" else meta["problem_id"])
