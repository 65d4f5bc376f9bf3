"""Dot-product kernels on the sphere and the PSD matrix powers behind the
Nyström whitening."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, SingularMatrixError

EIG_CLAMP = 1e-12
SYMMETRY_TOL = 1e-8


class KernelKind(str, enum.Enum):
    RBF = "rbf"


@dataclass(frozen=True)
class KernelSpec:
    """``kappa(t) = exp(alpha * (t - 1))`` on cosines ``t``."""

    alpha: float
    kind: KernelKind = KernelKind.RBF

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise InvalidArgumentError(f"kernel alpha must be positive, got {self.alpha}")
        object.__setattr__(self, "kind", KernelKind(self.kind))


def kappa(spec: KernelSpec, t):
    return np.exp(spec.alpha * (np.asarray(t) - 1.0))


def kappa_prime(spec: KernelSpec, t):
    return spec.alpha * np.exp(spec.alpha * (np.asarray(t) - 1.0))


@dataclass(frozen=True, eq=False)
class WhiteningSet:
    """``A = (M + eps I)^{-1/2}`` with its square root and 3/2 power.

    The eigendecomposition is kept for differentiating ``A`` with respect to ``M``.
    """

    A: np.ndarray
    A_half: np.ndarray
    A_threehalf: np.ndarray
    epsilon: float
    eigvals: np.ndarray
    eigvecs: np.ndarray

    def derivative_adjoint(self, G: np.ndarray) -> np.ndarray:
        """Adjoint of ``dA`` as a linear map of ``dM``, applied to ``G``.

        Returns ``H`` such that ``<DA[X], G> = <X, H>`` for every symmetric
        ``X``. Uses the divided differences of ``x -> x^{-1/2}`` in the
        eigenbasis, written without cancellation.
        """
        V = self.eigvecs
        r = np.sqrt(self.eigvals)
        L = -1.0 / (np.outer(r, r) * (r[:, None] + r[None, :]))
        return V @ (L * (V.T @ G @ V)) @ V.T

    def derivative_adjoint_commuting(self, G: np.ndarray) -> np.ndarray:
        """Same map under the first-order rule ``(I+Q)^{-1/2} ~ I - Q/2``.

        This is ``-1/2 A^{3/2} G A^{3/2}``; it agrees with
        :meth:`derivative_adjoint` only when ``G`` commutes with ``M``.
        """
        return -0.5 * self.A_threehalf @ G @ self.A_threehalf


def inv_sqrt_psd(M: np.ndarray, epsilon: float = 0.0) -> WhiteningSet:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {M.shape}")
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL:
        raise InvalidArgumentError("matrix is not symmetric")
    M = 0.5 * (M + M.T) + epsilon * np.eye(M.shape[0])
    w, V = np.linalg.eigh(M)
    if w[0] <= 0:
        raise SingularMatrixError(f"smallest eigenvalue {w[0]:.3e} is not positive")
    w = np.maximum(w, EIG_CLAMP)

    def power(q):
        P = (V * w ** q) @ V.T
        return 0.5 * (P + P.T)

    return WhiteningSet(
        A=power(-0.5),
        A_half=power(-0.25),
        A_threehalf=power(-0.75),
        epsilon=float(epsilon),
        eigvals=w,
        eigvecs=V,
    )
