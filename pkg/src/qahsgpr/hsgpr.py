"""Classical GP regression and its Hilbert-space reduced-rank approximation.

Three estimators live here:

* ``exact_gpr`` -- the full squared-exponential GP posterior (O(N^3)).
* ``reduced_gpr_direct`` -- the Laplace-eigenfunction approximation solved as an
  M x M linear system.
* ``reduced_gpr_svd`` -- the same approximation written as a sum over the
  singular triples of the feature matrix ``X = Phi sqrt(Lambda)``. This is the
  form the quantum pipeline reproduces, so it doubles as its reference.

Only 1-D inputs on a symmetric interval ``[-L, L]`` are supported.

Note on naming: ``basis_eigenvalues`` are the Laplace eigenvalues
``(pi j / 2L)^2`` of the basis functions, while ``singular_values`` are the
singular values of ``X``. They are unrelated quantities.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

METHODS = ("exact", "reduced-direct", "reduced-svd", "quantum-shots", "quantum-analytic")

# default rank rule: keep squared normalized singular values above this
RANK_THRESHOLD = 0.01


class DomainError(ValueError):
    """An input lies outside the open interval (-L, L)."""


class RankError(ValueError):
    """No singular value survives the rank rule."""


@dataclass(frozen=True)
class Hyperparams:
    sigma_f: float
    ell: float
    sigma: float

    def __post_init__(self):
        for name in ("sigma_f", "ell", "sigma"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")


@dataclass(frozen=True)
class Dataset:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float).ravel()
        ys = np.asarray(self.ys, dtype=float).ravel()
        if xs.shape != ys.shape:
            raise ValueError(f"xs and ys differ in length: {xs.size} vs {ys.size}")
        if xs.size < 1:
            raise ValueError("dataset needs at least one point")
        if not np.all(np.isfinite(xs)):
            raise ValueError("all xs must be finite")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def N(self) -> int:
        return int(self.xs.size)


@dataclass(frozen=True)
class DomainConfig:
    L: float
    M: int

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"L must be > 0, got {self.L}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M}")

    def check_inside(self, xs, what="input") -> None:
        xs = np.asarray(xs, dtype=float)
        bad = ~(np.abs(xs) < self.L)
        if np.any(bad):
            raise DomainError(
                f"{what} {xs[bad][:3].tolist()} outside the open interval "
                f"(-{self.L}, {self.L})"
            )


@dataclass(frozen=True)
class BasisExpansion:
    """Phi[i, j] = phi_j(x_i), LambdaDiag[j] = S(sqrt(lambda_j)), X = Phi sqrt(Lambda)."""

    Phi: np.ndarray
    LambdaDiag: np.ndarray
    X: np.ndarray
    dom: DomainConfig
    hp: Hyperparams

    def features(self, test_xs) -> np.ndarray:
        """Rows X*_i = phi(x*_i) sqrt(Lambda) for each test input."""
        test_xs = np.atleast_1d(np.asarray(test_xs, dtype=float))
        self.dom.check_inside(test_xs, "test input")
        return eigenfunction_matrix(test_xs, self.dom) * np.sqrt(self.LambdaDiag)


@dataclass(frozen=True)
class ReducedSVD:
    singular_values: np.ndarray
    U: np.ndarray
    V: np.ndarray
    frobenius_norm: float

    @property
    def rank(self) -> int:
        return int(self.singular_values.size)

    @property
    def normalized_sq(self) -> np.ndarray:
        """Squared singular values of X / ||X||_F (eigenvalues of the Gram density)."""
        return (self.singular_values / self.frobenius_norm) ** 2


@dataclass
class PosteriorEstimate:
    test_inputs: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    method: str
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method tag {self.method!r}")


def se_kernel(x, x_prime, hp: Hyperparams):
    """Squared-exponential covariance sigma_f^2 exp(-(x - x')^2 / (2 ell^2)).

    Broadcasts over array inputs.
    """
    d = np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float)
    return hp.sigma_f**2 * np.exp(-0.5 * d**2 / hp.ell**2)


def se_spectral_density(omega, hp: Hyperparams):
    """Spectral density of the 1-D squared-exponential kernel."""
    omega = np.asarray(omega, dtype=float)
    return hp.sigma_f**2 * np.sqrt(2 * np.pi) * hp.ell * np.exp(-0.5 * (omega * hp.ell) ** 2)


def laplace_eigenpair(j: int, dom: DomainConfig) -> tuple[Callable, float]:
    """Dirichlet Laplacian eigenfunction phi_j and eigenvalue lambda_j on [-L, L]."""
    if int(j) != j or j < 1:
        raise ValueError(f"eigenfunction index must be >= 1, got {j}")
    L = dom.L
    sqrt_lam = np.pi * j / (2 * L)

    def phi(x):
        return np.sin(sqrt_lam * (np.asarray(x, dtype=float) + L)) / np.sqrt(L)

    return phi, sqrt_lam**2


def basis_eigenvalues(dom: DomainConfig) -> np.ndarray:
    j = np.arange(1, dom.M + 1)
    return (np.pi * j / (2 * dom.L)) ** 2


def eigenfunction_matrix(xs, dom: DomainConfig) -> np.ndarray:
    xs = np.asarray(xs, dtype=float).ravel()
    sqrt_lam = np.sqrt(basis_eigenvalues(dom))
    return np.sin(np.outer(xs + dom.L, sqrt_lam)) / np.sqrt(dom.L)


def kernel_approx(x, x_prime, dom: DomainConfig, hp: Hyperparams) -> np.ndarray:
    """M-term Hilbert-space approximation of ``se_kernel`` (matrix over x, x')."""
    lam = basis_eigenvalues(dom)
    s = se_spectral_density(np.sqrt(lam), hp)
    return (eigenfunction_matrix(x, dom) * s) @ eigenfunction_matrix(x_prime, dom).T


def build_expansion(ds: Dataset, dom: DomainConfig, hp: Hyperparams) -> BasisExpansion:
    dom.check_inside(ds.xs, "training input")
    Phi = eigenfunction_matrix(ds.xs, dom)
    lam_diag = se_spectral_density(np.sqrt(basis_eigenvalues(dom)), hp)
    return BasisExpansion(Phi=Phi, LambdaDiag=lam_diag, X=Phi * np.sqrt(lam_diag), dom=dom, hp=hp)


def exact_gpr(ds: Dataset, hp: Hyperparams, test_xs) -> PosteriorEstimate:
    test_xs = np.atleast_1d(np.asarray(test_xs, dtype=float))
    K = se_kernel(ds.xs[:, None], ds.xs[None, :], hp) + hp.sigma**2 * np.eye(ds.N)
    try:
        cho = scipy.linalg.cho_factor(K, lower=True)
    except np.linalg.LinAlgError as e:
        raise np.linalg.LinAlgError("K + sigma^2 I is not positive definite") from e
    k_star = se_kernel(test_xs[:, None], ds.xs[None, :], hp)
    mean = k_star @ scipy.linalg.cho_solve(cho, ds.ys)
    var = hp.sigma_f**2 - np.einsum("ij,ji->i", k_star, scipy.linalg.cho_solve(cho, k_star.T))
    return PosteriorEstimate(test_xs, mean, np.maximum(var, 0.0), "exact")


def reduced_gpr_direct(be: BasisExpansion, ds: Dataset, hp: Hyperparams, test_xs) -> PosteriorEstimate:
    test_xs = np.atleast_1d(np.asarray(test_xs, dtype=float))
    be.dom.check_inside(test_xs, "test input")
    phi_star = eigenfunction_matrix(test_xs, be.dom)
    A = be.Phi.T @ be.Phi + hp.sigma**2 * np.diag(1.0 / be.LambdaDiag)
    cho = scipy.linalg.cho_factor(A, lower=True)
    mean = phi_star @ scipy.linalg.cho_solve(cho, be.Phi.T @ ds.ys)
    var = hp.sigma**2 * np.einsum("ij,ji->i", phi_star, scipy.linalg.cho_solve(cho, phi_star.T))
    return PosteriorEstimate(test_xs, mean, np.maximum(var, 0.0), "reduced-direct")


def reduced_svd(be_or_X, R: int | None = None, threshold: float = RANK_THRESHOLD) -> ReducedSVD:
    """Truncated SVD of the feature matrix.

    With ``R=None`` the rank rule keeps every singular value whose squared value
    on the Frobenius-normalized matrix exceeds ``threshold``. An explicit ``R``
    keeps the top ``R`` triples instead.
    """
    X = be_or_X.X if isinstance(be_or_X, BasisExpansion) else np.asarray(be_or_X, dtype=float)
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    fro = float(np.linalg.norm(X))
    if fro == 0:
        raise RankError("feature matrix is zero")
    if R is None:
        keep = int(np.sum((s / fro) ** 2 > threshold))
    else:
        if R < 1 or R > s.size:
            raise RankError(f"rank {R} outside 1..{s.size}")
        keep = int(np.sum(s[:R] > 0))
    if keep == 0:
        raise RankError("no retained rank")
    return ReducedSVD(singular_values=s[:keep], U=U[:, :keep], V=Vt[:keep].T, frobenius_norm=fro)


def reduced_gpr_svd(svd: ReducedSVD, be: BasisExpansion, ds: Dataset, hp: Hyperparams, test_xs) -> PosteriorEstimate:
    test_xs = np.atleast_1d(np.asarray(test_xs, dtype=float))
    Xs = be.features(test_xs)
    lam = svd.singular_values
    s2 = hp.sigma**2
    proj = Xs @ svd.V  # X*^T v_r
    mean = proj @ (lam / (lam**2 + s2) * (svd.U.T @ ds.ys))
    var = s2 * (proj**2) @ (1.0 / (lam**2 + s2))
    return PosteriorEstimate(test_xs, mean, var, "reduced-svd", {"R": svd.rank})
