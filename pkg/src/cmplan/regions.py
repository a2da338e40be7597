"""Latent sampling regions and their constraint-aware refinement.

A region is a latent vector ``z`` that decodes to a Gaussian ``N(mu, Sigma)``
over configurations with ``Sigma = L D^2 L^T`` (``L`` unit lower triangular,
``D`` positive diagonal). The decoder is a fixed pack/unpack map

    z = [mu (n) | strict-lower entries of L (n(n-1)/2) | log diag D (n)]

so its derivative is exact. Refinement minimises the Monte-Carlo estimate of
``E[G(q)]`` under the region, differentiated through ``q = mu + L D eps``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import solve_triangular

from .constraints import ConstraintSet
from .errors import NumericalError

LOG_D_FLOOR = -20.0
STD_FLOOR = 0.05


@dataclass(frozen=True, eq=False)
class GaussianParams:
    mu: np.ndarray
    L: np.ndarray
    D: np.ndarray  # diagonal entries, shape (n,)

    @property
    def n(self) -> int:
        return self.mu.size

    @property
    def scale_tril(self) -> np.ndarray:
        """Lower-triangular factor ``L D`` with ``Sigma = (L D)(L D)^T``."""
        return self.L * self.D

    @property
    def cov(self) -> np.ndarray:
        S = self.scale_tril
        return S @ S.T

    def sample(self, eps: np.ndarray) -> np.ndarray:
        """``mu + L D eps`` for one ``(n,)`` or a batch ``(m, n)`` of noise vectors."""
        return self.mu + (np.asarray(eps) * self.D) @ self.L.T

    def log_density(self, q: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(q)
        w = solve_triangular(self.scale_tril, (q - self.mu).T, lower=True)
        maha = np.sum(w * w, axis=0)
        return -0.5 * maha - np.sum(np.log(self.D)) - 0.5 * self.n * math.log(2 * math.pi)


class CholeskyDecoder:
    """Pack/unpack decoder ``z -> (mu, L, D)`` for n-dimensional Gaussians."""

    def __init__(self, n: int):
        self.n = n
        self.rows, self.cols = np.tril_indices(n, -1)
        self.n_tril = self.rows.size
        self.d = 2 * n + self.n_tril

    def _check(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.d,):
            raise ValueError(f"latent must have shape ({self.d},), got {z.shape}")
        return z

    def decode(self, z) -> GaussianParams:
        z = self._check(z)
        n = self.n
        L = np.eye(n)
        L[self.rows, self.cols] = z[n:n + self.n_tril]
        log_d = np.maximum(z[n + self.n_tril:], LOG_D_FLOOR)
        return GaussianParams(z[:n].copy(), L, np.exp(log_d))

    def encode(self, mu, L=None, D=None) -> np.ndarray:
        n = self.n
        mu = np.asarray(mu, dtype=float).reshape(n)
        L = np.eye(n) if L is None else np.asarray(L, dtype=float)
        D = np.ones(n) if D is None else np.asarray(D, dtype=float).reshape(n)
        if np.any(D <= 0):
            raise ValueError("D entries must be positive")
        return np.concatenate([mu, L[self.rows, self.cols], np.log(D)])

    def pullback(self, z, grad_mu, grad_L, grad_D) -> np.ndarray:
        """Map gradients w.r.t. ``(mu, L, D)`` to a gradient w.r.t. ``z``.

        ``grad_L`` is a full ``(n, n)`` array; only its strict lower part is used.
        """
        z = self._check(z)
        n = self.n
        log_d = z[n + self.n_tril:]
        d_log = np.where(log_d > LOG_D_FLOOR, np.asarray(grad_D) * np.exp(log_d), 0.0)
        return np.concatenate([np.asarray(grad_mu, dtype=float),
                               np.asarray(grad_L)[self.rows, self.cols], d_log])


@dataclass(eq=False)
class Codebook:
    """Finite set of latent regions; index ``N`` is reserved for the goal token."""

    n: int
    latents: np.ndarray

    def __post_init__(self):
        self.decoder = CholeskyDecoder(self.n)
        self.latents = np.array(self.latents, dtype=float).reshape(-1, self.decoder.d)
        if self.latents.shape[0] < 1:
            raise ValueError("codebook needs at least one region")

    @property
    def d(self) -> int:
        return self.decoder.d

    @property
    def size(self) -> int:
        return self.latents.shape[0]

    @property
    def goal_index(self) -> int:
        return self.size

    def latent(self, index: int) -> np.ndarray:
        if not 0 <= index < self.size:
            raise IndexError(f"region index {index} out of range (goal token is {self.goal_index})")
        return self.latents[index].copy()

    def region(self, index: int) -> GaussianParams:
        return self.decoder.decode(self.latents[index])

    def means(self) -> np.ndarray:
        return self.latents[:, :self.n].copy()

    def to_dict(self) -> dict:
        return {"n": self.n, "d": self.d,
                "regions": [{"z": [float(v) for v in z]} for z in self.latents]}

    @classmethod
    def from_dict(cls, data: dict) -> "Codebook":
        book = cls(int(data["n"]), [r["z"] for r in data["regions"]])
        if "d" in data and int(data["d"]) != book.d:
            raise ValueError(f"codebook d={data['d']} does not match n={book.n} (expected {book.d})")
        return book

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Codebook":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class OptimizerParams:
    eta: float = 0.05
    n_mc: int = 64
    delta_stop: float = 1e-3
    max_outer_iters: int = 200
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.n_mc < 1:
            raise ValueError("n_mc must be >= 1")
        if not self.delta_stop > 0:
            raise ValueError("delta_stop must be > 0")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")


def decode(codebook: Codebook, z) -> GaussianParams:
    return codebook.decoder.decode(z)


def reparam_sample(params: GaussianParams, eps) -> np.ndarray:
    return params.sample(eps)


def mc_loss(codebook: Codebook, z, F: ConstraintSet, eps_batch) -> float:
    """Monte-Carlo estimate of ``E[G(q)]`` over the decoded region."""
    eps_batch = np.atleast_2d(eps_batch)
    if eps_batch.shape[0] == 0:
        raise ValueError("eps_batch must be nonempty")
    qs = decode(codebook, z).sample(eps_batch)
    return float(np.mean(F.squared_residual_batch(qs)))


def loss_and_gradient(codebook: Codebook, z, F: ConstraintSet, eps_batch):
    """Return ``(loss, dloss/dz)`` with the noise batch held fixed."""
    eps_batch = np.atleast_2d(np.asarray(eps_batch, dtype=float))
    m = eps_batch.shape[0]
    if m == 0:
        raise ValueError("eps_batch must be nonempty")
    g = decode(codebook, z)
    u = eps_batch * g.D
    qs = g.mu + u @ g.L.T
    r = F.evaluate_batch(qs)
    loss = float(np.einsum("ij,ij->", r, r) / m)
    if F.k == 0:
        return loss, np.zeros(codebook.d)
    J = F.jacobian_batch(qs)
    # dloss/dq_k for every sample
    gq = (2.0 / m) * np.einsum("mk,mkn->mn", r, J)
    grad_mu = gq.sum(axis=0)
    grad_L = gq.T @ u
    grad_D = np.einsum("mj,mj->j", gq @ g.L, eps_batch)
    return loss, codebook.decoder.pullback(z, grad_mu, grad_L, grad_D)


def loss_gradient(codebook: Codebook, z, F: ConstraintSet, eps_batch) -> np.ndarray:
    return loss_and_gradient(codebook, z, F, eps_batch)[1]


def update_distribution(codebook: Codebook, z, F: ConstraintSet,
                        params: OptimizerParams = OptimizerParams(),
                        rng: Optional[np.random.Generator] = None,
                        history: Optional[list] = None) -> np.ndarray:
    """Gradient descent on the Monte-Carlo loss with fresh noise each iteration.

    Stops once the applied step ``eta * grad`` is shorter than ``delta_stop``
    or after ``max_outer_iters`` iterations. Raises :class:`NumericalError`
    if the loss or gradient stops being finite; the caller should then keep
    the original latent. ``history``, if given, receives each iteration's loss.
    """
    rng = np.random.default_rng(params.seed) if rng is None else rng
    z = np.array(z, dtype=float)
    n = codebook.n
    for _ in range(params.max_outer_iters):
        eps = rng.standard_normal((params.n_mc, n))
        loss, grad = loss_and_gradient(codebook, z, F, eps)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericalError("non-finite loss or gradient during region update")
        if history is not None:
            history.append(loss)
        step = params.eta * grad
        z = z - step
        if float(np.linalg.norm(step)) < params.delta_stop:
            break
    return z


@dataclass(frozen=True)
class MarkovCheck:
    lhs: float
    rhs: float
    lhs_stderr: float
    rhs_stderr: float
    threshold: float
    samples: int

    def holds(self, n_sigma: float = 3.0) -> bool:
        return self.lhs <= self.rhs + n_sigma * math.hypot(self.lhs_stderr, self.rhs_stderr)


def markov_bound_check(codebook: Codebook, z, F: ConstraintSet, threshold_delta: float,
                       sample_count: int, rng: Optional[np.random.Generator] = None) -> MarkovCheck:
    """Empirical ``P(G > delta)`` against the bound ``E[G] / delta`` from one sample batch."""
    if not threshold_delta > 0:
        raise ValueError("threshold_delta must be > 0")
    rng = np.random.default_rng() if rng is None else rng
    qs = decode(codebook, z).sample(rng.standard_normal((sample_count, codebook.n)))
    G = F.squared_residual_batch(qs)
    exceed = (G > threshold_delta).astype(float)
    scaled = G / threshold_delta
    denom = math.sqrt(sample_count)
    return MarkovCheck(
        lhs=float(exceed.mean()),
        rhs=float(scaled.mean()),
        lhs_stderr=float(exceed.std() / denom),
        rhs_stderr=float(scaled.std() / denom),
        threshold=threshold_delta,
        samples=sample_count,
    )


def fit_codebook(paths: Sequence[Sequence[Sequence[float]]], N: int, seed: int = 0,
                 iterations: int = 50) -> Codebook:
    """Quantise path configurations into ``N`` Gaussian regions with k-means.

    Each region is centred on its centroid with ``L = I`` and ``D`` equal to
    the per-coordinate standard deviation of its members, floored at 0.05 rad.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    chunks = [np.atleast_2d(np.asarray(p, dtype=float)) for p in paths if len(p)]
    if not chunks:
        raise ValueError("path dataset is empty")
    data = np.vstack(chunks)
    distinct = np.unique(data, axis=0).shape[0]
    if N > distinct:
        raise ValueError(f"N={N} exceeds the number of distinct configurations ({distinct})")
    n = data.shape[1]
    centroids, labels = kmeans2(data, N, iter=iterations, minit="++", missing="warn",
                                rng=np.random.default_rng(seed))
    decoder = CholeskyDecoder(n)
    latents = []
    for i in range(N):
        members = data[labels == i]
        std = members.std(axis=0) if len(members) else np.zeros(n)
        latents.append(decoder.encode(centroids[i], None, np.maximum(std, STD_FLOOR)))
    return Codebook(n, np.array(latents))


def load_paths(path) -> list:
    """Read a JSON array of paths, each an array of configuration arrays."""
    data = json.loads(Path(path).read_text())
    return [np.asarray(p, dtype=float) for p in data]
