"""
Entropies and mutual information (all in nats)
==============================================

Discrete and Gaussian entropies, the Gaussian channel information
``1/2 log det(C_X + C_Y) / det(C_Y)`` with its eigenvalue form, the
maximum-entropy laws behind the channel bounds, and the first-passage
probability that turns a running-maximum signal into a binary entropy.

Determinants come from Cholesky factors and eigenvalues from a symmetric
eigensolver; nothing here expands cofactors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError
from .market import MarketModel
from .stochastic_core import quadrature

Array = np.ndarray

__all__ = [
    "CovarianceMatrix",
    "InformationValue",
    "MaxEntLaw",
    "discrete_entropy",
    "discrete_mutual_information",
    "conditional_mutual_information",
    "gaussian_differential_entropy",
    "gaussian_channel_information",
    "brownian_covariance",
    "isotropic_gaussian_bound",
    "laplace_perturbation_bound",
    "maxent_entropy",
    "running_max_probability",
    "indicator_insider_information",
]

_LOG_2PIE = math.log(2.0 * math.pi * math.e)
EXACT = "exact"
UPPER_BOUND = "upper_bound"


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric positive semi-definite ``d x d`` matrix.

    Eigenvalues (ascending) are computed once, on construction, and the
    PSD check allows ``-1e-10 * trace`` of round-off.
    """

    entries: Array
    eigenvalues: Array = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        a = np.array(self.entries, dtype=float, copy=True)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise ParameterError(f"covariance must be a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ParameterError("covariance entries must be finite")
        scale = max(1.0, float(np.max(np.abs(a))))
        if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * scale):
            raise ParameterError("covariance must be symmetric")
        a = 0.5 * (a + a.T)
        eig = np.linalg.eigvalsh(a)
        if eig[0] < -1e-10 * max(float(np.trace(a)), np.finfo(float).tiny):
            raise ParameterError(f"covariance is not positive semi-definite (eigenvalue {eig[0]!r})")
        a.setflags(write=False)
        eig.setflags(write=False)
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "eigenvalues", eig)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __add__(self, other: "CovarianceMatrix") -> "CovarianceMatrix":
        if other.dim != self.dim:
            raise ParameterError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return CovarianceMatrix(self.entries + other.entries)

    def to_list(self) -> list:
        return self.entries.tolist()


def _as_cov(c) -> CovarianceMatrix:
    return c if isinstance(c, CovarianceMatrix) else CovarianceMatrix(c)


def _logdet_pd(a: Array):
    """``log det a`` through a Cholesky factor, or ``None`` if ``a`` is not positive definite."""
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None
    diag = np.diag(chol)
    if np.any(diag <= 0.0):
        return None
    return 2.0 * math.fsum(np.log(diag))


@dataclass(frozen=True)
class InformationValue:
    """An amount of information in nats, either exact or an upper bound."""

    nats: float
    kind: str = EXACT

    def __post_init__(self):
        if self.kind not in (EXACT, UPPER_BOUND):
            raise ParameterError(f"kind must be 'exact' or 'upper_bound', got {self.kind!r}")
        if math.isnan(self.nats) or self.nats < 0:
            raise ParameterError(f"information must be non-negative, got {self.nats!r}")

    @property
    def finite(self) -> bool:
        return math.isfinite(self.nats)

    def to_dict(self) -> dict:
        return {"nats": self.nats, "kind": self.kind}


# ------------------------------ Discrete laws ------------------------------ #

def _probabilities(probs) -> Array:
    p = np.asarray(probs, dtype=float)
    if p.size == 0:
        raise ParameterError("need at least one probability")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ParameterError("probabilities must be finite and non-negative")
    if abs(math.fsum(p.ravel()) - 1.0) > 1e-12:
        raise ParameterError(f"probabilities must sum to 1, got {math.fsum(p.ravel())!r}")
    return p


def _plogp_sum(p: Array) -> float:
    nz = p[p > 0]
    return math.fsum(nz * np.log(nz))


def discrete_entropy(probs: Iterable[float]) -> float:
    """``-sum p log p`` with ``0 log 0 = 0``.

    >>> round(discrete_entropy([0.5, 0.5]), 6)
    0.693147
    """
    p = _probabilities(list(probs))
    return max(0.0, -_plogp_sum(p.ravel()))


def discrete_mutual_information(joint) -> float:
    """``I(X, Y)`` for a joint probability table with ``X`` along rows."""
    p = _probabilities(joint)
    if p.ndim != 2:
        raise ParameterError("joint table must be two-dimensional")
    hx = -_plogp_sum(p.sum(axis=1))
    hy = -_plogp_sum(p.sum(axis=0))
    hxy = -_plogp_sum(p.ravel())
    return max(0.0, hx + hy - hxy)


def conditional_mutual_information(joint) -> float:
    """``I(X, Y | Z)`` for a joint table indexed ``[x, y, z]``."""
    p = _probabilities(joint)
    if p.ndim != 3:
        raise ParameterError("joint table must be three-dimensional")
    h_xz = -_plogp_sum(p.sum(axis=1).ravel())
    h_yz = -_plogp_sum(p.sum(axis=0).ravel())
    h_z = -_plogp_sum(p.sum(axis=(0, 1)))
    h_xyz = -_plogp_sum(p.ravel())
    return max(0.0, h_xz + h_yz - h_z - h_xyz)


# ------------------------------ Gaussian laws ------------------------------ #

def gaussian_differential_entropy(cov) -> float:
    """``1/2 log((2 pi e)^d det C)``; ``-inf`` when ``C`` is singular."""
    cov = _as_cov(cov)
    logdet = _logdet_pd(cov.entries)
    if logdet is None:
        return -math.inf
    return 0.5 * (cov.dim * _LOG_2PIE + logdet)


def gaussian_channel_information(cx, cy, gaussian_signal: bool = True) -> InformationValue:
    """Information carried by ``X + Y`` about ``X`` for independent ``X``, ``Y``.

    The value ``1/2 log det(C_X + C_Y) / det(C_Y)`` is exact when ``X`` is
    Gaussian and an upper bound otherwise (``gaussian_signal=False``).
    """
    cx, cy = _as_cov(cx), _as_cov(cy)
    if cx.dim != cy.dim:
        raise ParameterError(f"dimension mismatch: {cx.dim} vs {cy.dim}")
    log_y = _logdet_pd(cy.entries)
    if log_y is None:
        raise ParameterError("noise covariance must be positive definite")
    log_xy = _logdet_pd((cx + cy).entries)
    nats = max(0.0, 0.5 * (log_xy - log_y))
    return InformationValue(nats, EXACT if gaussian_signal else UPPER_BOUND)


def brownian_covariance(times: Sequence[float]) -> CovarianceMatrix:
    """Covariance ``min(t_i, t_j)`` of Brownian motion sampled at increasing ``times``."""
    t = np.asarray(times, dtype=float).ravel()
    if t.size == 0:
        raise ParameterError("need at least one time")
    if not np.all(np.isfinite(t)) or t[0] <= 0 or np.any(np.diff(t) <= 0):
        raise ParameterError("times must be positive and strictly increasing")
    return CovarianceMatrix(np.minimum.outer(t, t))


def isotropic_gaussian_bound(eigenvalues: Sequence[float], kappa: float) -> InformationValue:
    """``1/2 sum log((lambda_j + kappa) / kappa)``: the bound for noise ``kappa * I``."""
    if not (kappa > 0 and math.isfinite(kappa)):
        raise ParameterError(f"kappa must be positive, got {kappa!r}")
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    if not np.all(np.isfinite(lam)):
        raise ParameterError("eigenvalues must be finite")
    slack = 1e-10 * max(float(np.sum(np.abs(lam))), 1.0)
    if np.any(lam < -slack):
        raise ParameterError("eigenvalues must be non-negative")
    lam = np.clip(lam, 0.0, None)
    return InformationValue(0.5 * math.fsum(np.log1p(lam / kappa)), UPPER_BOUND)


def laplace_perturbation_bound(kappa1: float, kappa2: float) -> InformationValue:
    """``log((kappa1 + kappa2) / kappa2)`` for noise with ``E|Y| = kappa2`` and ``E|X| <= kappa1``."""
    if not (kappa2 > 0 and math.isfinite(kappa2)):
        raise ParameterError(f"kappa2 must be positive, got {kappa2!r}")
    if not (kappa1 >= 0 and math.isfinite(kappa1)):
        raise ParameterError(f"kappa1 must be non-negative, got {kappa1!r}")
    return InformationValue(math.log1p(kappa1 / kappa2), UPPER_BOUND)


@dataclass(frozen=True)
class MaxEntLaw:
    """The entropy-maximizing law under one moment constraint."""

    family: str
    params: dict

    def entropy(self) -> float:
        if self.family == "gaussian":
            return 0.5 * math.log(2.0 * math.pi * math.e * self.params["variance"])
        return 1.0 + math.log(2.0 * self.params["scale"])

    def density(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "gaussian":
            v = self.params["variance"]
            return np.exp(-0.5 * x * x / v) / math.sqrt(2.0 * math.pi * v)
        c = self.params["scale"]
        return np.exp(-np.abs(x) / c) / (2.0 * c)


def maxent_entropy(constraint: str, value: float) -> tuple[float, MaxEntLaw]:
    """Largest differential entropy under ``E X^2 = value`` or ``E|X| = value``.

    ``constraint`` is ``"second_moment"`` (Gaussian) or ``"absolute_moment"``
    (two-sided exponential with density ``exp(-|x|/c) / (2c)``).
    """
    if not (value > 0 and math.isfinite(value)):
        raise ParameterError(f"constraint value must be positive, got {value!r}")
    if constraint == "second_moment":
        law = MaxEntLaw("gaussian", {"variance": float(value)})
    elif constraint == "absolute_moment":
        law = MaxEntLaw("laplace", {"scale": float(value)})
    else:
        raise ParameterError(f"unknown constraint {constraint!r}")
    return law.entropy(), law


# --------------------------- Running-max signal ---------------------------- #

def running_max_probability(model: MarketModel, c: float, tol: float = 1e-12) -> float:
    """``P(sup_{t <= 1} S_t > c)`` from the first-passage density of ``W_t + b t``.

    ``c`` is read relative to ``s0``.  Levels at or below the start are
    crossed almost surely and return 1 without integrating.
    """
    if model.T != 1.0:
        raise ParameterError("running-max signal is defined on [0, 1]")
    if not (c > 0 and math.isfinite(c)):
        raise ParameterError(f"level must be positive, got {c!r}")
    a = math.log(c / model.s0)
    if a <= 0:
        return 1.0
    b = model.b
    norm = a / math.sqrt(2.0 * math.pi)

    def density(s: float) -> float:
        return norm * s ** -1.5 * math.exp(b * a - 0.5 * b * b * s - a * a / (2.0 * s))

    p = quadrature(density, 0.0, 1.0, tol=tol)
    return min(1.0, max(0.0, p))


def indicator_insider_information(model: MarketModel, c: float) -> InformationValue:
    """Exact utility increment for knowing whether ``sup S`` ends above ``c``: ``H(G)``."""
    p = running_max_probability(model, c)
    return InformationValue(discrete_entropy([p, 1.0 - p]), EXACT)
