"""Norms on R^d together with their Euclidean-equivalence constants.

A :class:`Norm` satisfies ``ell * |x|_2 <= |x| <= u * |x|_2`` with the
tightest possible ``(ell, u)``.  Four families are supported: Euclidean,
max (l-infinity), weighted max ``max_i |x_i| / w_i`` and quadratic
``sqrt(x^T P x)`` with ``P`` symmetric positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import InputError

KINDS = ("euclidean", "max", "weighted_max", "quadratic")

_EIG_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Norm:
    kind: str
    dim: int
    weights: np.ndarray | None = field(default=None, repr=False)
    matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown norm kind {self.kind!r}; expected one of {KINDS}")
        if int(self.dim) < 1:
            raise InputError("norm dimension must be a positive integer")
        object.__setattr__(self, "dim", int(self.dim))
        if self.kind == "weighted_max":
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape != (self.dim,):
                raise InputError(f"expected {self.dim} weights, got {w.shape}")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise InputError("weights must be finite and strictly positive")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
        elif self.kind == "quadratic":
            P = np.asarray(self.matrix, dtype=float)
            if P.shape != (self.dim, self.dim):
                raise InputError(f"expected a {self.dim}x{self.dim} matrix, got {P.shape}")
            scale = max(1.0, float(np.abs(P).max()))
            if not np.allclose(P, P.T, rtol=0.0, atol=1e-10 * scale):
                raise InputError("quadratic norm matrix must be symmetric")
            P = 0.5 * (P + P.T)
            lam = np.linalg.eigvalsh(P)
            if lam[0] <= _EIG_TOL * max(1.0, lam[-1]):
                raise InputError(f"quadratic norm matrix is not positive definite (min eigenvalue {lam[0]:.3e})")
            P.setflags(write=False)
            object.__setattr__(self, "matrix", P)

    # constructors
    @classmethod
    def euclidean(cls, dim):
        return cls("euclidean", dim)

    @classmethod
    def max(cls, dim):
        return cls("max", dim)

    @classmethod
    def weighted_max(cls, weights):
        w = np.asarray(weights, dtype=float).reshape(-1)
        return cls("weighted_max", w.size, weights=w)

    @classmethod
    def quadratic(cls, P):
        P = np.asarray(P, dtype=float)
        return cls("quadratic", P.shape[0], matrix=P)

    @cached_property
    def _eig(self):
        lam, vec = np.linalg.eigh(self.matrix)
        return lam, vec

    @cached_property
    def sqrt_matrix(self):
        """Symmetric square root R of P, so that |x| = |R x|_2 (quadratic kind only)."""
        lam, vec = self._eig
        return (vec * np.sqrt(lam)) @ vec.T

    @cached_property
    def inv_sqrt_matrix(self):
        lam, vec = self._eig
        return (vec / np.sqrt(lam)) @ vec.T

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            raise InputError(f"expected vectors of dimension {self.dim}, got shape {x.shape}")
        return x

    def __call__(self, x):
        """Evaluate the norm along the last axis of ``x``."""
        x = self._check(x)
        if self.kind == "euclidean":
            return np.linalg.norm(x, axis=-1)
        if self.kind == "max":
            return np.abs(x).max(axis=-1)
        if self.kind == "weighted_max":
            return (np.abs(x) / self.weights).max(axis=-1)
        return np.linalg.norm(x @ self.sqrt_matrix, axis=-1)

    def equivalence_constants(self):
        """Tightest ``(ell, u)`` with ``ell |x|_2 <= |x| <= u |x|_2``."""
        if self.kind == "euclidean":
            return 1.0, 1.0
        if self.kind == "max":
            return 1.0 / np.sqrt(self.dim), 1.0
        if self.kind == "weighted_max":
            # min over the unit sphere is attained at |x_i| proportional to w_i
            return 1.0 / float(np.linalg.norm(self.weights)), 1.0 / float(self.weights.min())
        lam = self._eig[0]
        return float(np.sqrt(lam[0])), float(np.sqrt(lam[-1]))

    def extremal_directions(self):
        """Unit-Euclidean vectors attaining the lower and upper equivalence bounds."""
        d = self.dim
        if self.kind == "euclidean":
            e = np.eye(d)[0]
            return e, e
        if self.kind == "max":
            return np.ones(d) / np.sqrt(d), np.eye(d)[0]
        if self.kind == "weighted_max":
            w = self.weights
            return w / np.linalg.norm(w), np.eye(d)[int(np.argmin(w))]
        vec = self._eig[1]
        return vec[:, 0], vec[:, -1]

    def operator_norm(self, M):
        """Induced norm sup_{x != 0} |M x| / |x| of a square matrix."""
        M = np.asarray(M, dtype=float)
        if M.shape[-2:] != (self.dim, self.dim):
            raise InputError(f"expected {self.dim}x{self.dim} matrices, got shape {M.shape}")
        if self.kind == "euclidean":
            return np.linalg.norm(M, ord=2, axis=(-2, -1))
        if self.kind == "max":
            return np.abs(M).sum(axis=-1).max(axis=-1)
        if self.kind == "weighted_max":
            w = self.weights
            scaled = np.abs(M) * w[None, :] / w[:, None]
            return scaled.sum(axis=-1).max(axis=-1)
        R, Ri = self.sqrt_matrix, self.inv_sqrt_matrix
        return np.linalg.norm(R @ M @ Ri, ord=2, axis=(-2, -1))

    def to_dict(self):
        out = {"kind": self.kind, "dim": self.dim}
        if self.kind == "weighted_max":
            out["weights"] = self.weights.tolist()
        elif self.kind == "quadratic":
            out["matrix"] = self.matrix.tolist()
        return out

    @classmethod
    def from_dict(cls, data, dim=None):
        data = dict(data)
        kind = data.get("kind")
        if kind == "weighted_max":
            return cls.weighted_max(data["weights"])
        if kind == "quadratic":
            return cls.quadratic(data["matrix"])
        d = data.get("dim", dim)
        if d is None:
            raise InputError(f"norm of kind {kind!r} needs a dimension")
        return cls(kind, int(d))


def norm_value(norm, x):
    return norm(x)


def equivalence_constants(norm):
    return norm.equivalence_constants()
