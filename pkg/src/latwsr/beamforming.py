"""Rates, MMSE receivers, MSE matrices and the SCA rate bound.

Array layout
------------
H      : (B, U, N, N_R, N_T)   channel from BS b to user u on sub-channel n
serving: (U,)                  index of the BS serving each user
tx (M) : (U, N, N_T, S)        transmit beamformers
rx (W) : (U, N, N_R, S)        receive beamformers

Per-user kernels take the *effective* channels seen at that user:
``desired`` is ``H_{b_u,u,n} M_{u,n}`` with shape ``(..., N_R, S)`` and
``interf`` stacks ``H_{b_i,u,n} M_{i,n}`` for the interfering users along
axis ``-3``.  These are the quantities a UE measures from precoded pilots,
so the same kernels serve the centralized engine and the UE nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LN2 = math.log(2.0)


class NumericalError(ArithmeticError):
    """Matrix that must be positive definite is not (numerically)."""


def herm(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def eye_like(n: int, batch_shape=()) -> np.ndarray:
    return np.broadcast_to(np.eye(n, dtype=complex), (*batch_shape, n, n))


def _cholesky(a: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(a.reshape(-1, *a.shape[-2:])).max()
        raise NumericalError(f"{what} is not positive definite (condition number {cond:.3e})") from exc


def logdet2(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    """``log2 det`` of Hermitian PD matrices via Cholesky (log domain)."""
    c = _cholesky(a, what)
    return 2.0 * np.sum(np.log(np.real(np.diagonal(c, axis1=-2, axis2=-1))), axis=-1) / LN2


# -- network-wide effective channels ---------------------------------------


def effective_channels(H: np.ndarray, serving: np.ndarray, tx: np.ndarray) -> np.ndarray:
    """``F[u, n, i] = H[serving[i], u, n] @ tx[i, n]``, shape (U, N, U, N_R, S)."""
    return np.moveaxis(H[serving] @ tx[:, None], 0, 2)


def bs_effective(H_b: np.ndarray, tx_own: np.ndarray) -> np.ndarray:
    """Precoded pilots of one BS as seen by every user: ``(U_b, U, N, N_R, S)``."""
    return H_b[None] @ tx_own[:, None]


def split_effective(F: np.ndarray):
    """Split ``F`` into desired ``(U, N, N_R, S)`` and interference parts."""
    U = F.shape[0]
    idx = np.arange(U)
    desired = F[idx, :, idx]
    interf = F.copy()
    interf[idx, :, idx] = 0.0
    return desired, interf


def uplink_effective(H: np.ndarray, rx: np.ndarray) -> np.ndarray:
    """``G[b, i, n] = H[b, i, n]^H @ rx[i, n]``, shape (B, U, N, N_T, S)."""
    return herm(H) @ rx[None]


# -- per-user kernels ------------------------------------------------------


def _stack_columns(a: np.ndarray) -> np.ndarray:
    """``(..., I, R, S) -> (..., R, I*S)`` so that ``sum_i a_i a_i^H = A A^H``."""
    a = np.moveaxis(a, -3, -2)
    return a.reshape(*a.shape[:-2], a.shape[-2] * a.shape[-1])


def interference_covariance(interf: np.ndarray, sigma2: float) -> np.ndarray:
    nr = interf.shape[-2]
    A = _stack_columns(interf)
    return A @ herm(A) + sigma2 * np.eye(nr)


def rate_from_effective(desired: np.ndarray, interf: np.ndarray, sigma2: float) -> np.ndarray:
    """``log2 det(I + D D^H R^{-1})`` with ``R`` the interference-plus-noise covariance.

    Evaluated as ``log2 det(I_S + D^H R^{-1} D)`` through a Cholesky factor of ``R``.
    """
    if sigma2 <= 0:
        raise ValueError("noise power must be positive")
    R = interference_covariance(interf, sigma2)
    L = _cholesky(R, "interference covariance")
    Z = np.linalg.solve(L, desired)
    S = desired.shape[-1]
    K = herm(Z) @ Z
    return np.maximum(logdet2(np.eye(S) + K), 0.0)


def mmse_from_effective(desired: np.ndarray, interf: np.ndarray, sigma2: float) -> np.ndarray:
    """MMSE receiver ``(sum_i F_i F_i^H + sigma2 I)^{-1} D``."""
    cov = interference_covariance(interf, sigma2) + desired @ herm(desired)
    return np.linalg.solve(cov, desired)


def mse_from_effective(desired, interf, rx, sigma2: float) -> np.ndarray:
    """MSE matrix for receive matrix ``rx`` (any receiver, not only MMSE)."""
    S = desired.shape[-1]
    resid = np.eye(S) - herm(rx) @ desired
    wf = _stack_columns(herm(rx)[..., None, :, :] @ interf)  # [W^H F_1, W^H F_2, ...]
    e = resid @ herm(resid) + wf @ herm(wf)
    e = e + sigma2 * (herm(rx) @ rx)
    return 0.5 * (e + herm(e))


def taylor_rate_bound(e: np.ndarray, e_ref: np.ndarray) -> np.ndarray:
    """First-order lower bound on ``-log2 det(e)`` around ``e_ref``.

    ``-log2 det(e_ref) - tr(e_ref^{-1} (e - e_ref)) / ln 2``
    """
    c = _cholesky(e_ref, "reference MSE matrix")
    ld = 2.0 * np.sum(np.log(np.real(np.diagonal(c, axis1=-2, axis2=-1))), axis=-1) / LN2
    # tr(e_ref^{-1} e) via the Cholesky factor
    y = np.linalg.solve(c, e)
    x = np.linalg.solve(herm(c), y)
    S = e.shape[-1]
    tr = np.real(np.trace(x, axis1=-2, axis2=-1)) - S
    return -ld - tr / LN2


# -- network-level convenience ---------------------------------------------


def rates(H, serving, tx, sigma2: float) -> np.ndarray:
    """Per (user, sub-channel) rate in bits/s/Hz, shape (U, N)."""
    D, I = split_effective(effective_channels(H, serving, tx))
    return rate_from_effective(D, I, sigma2)


def mmse_receivers(H, serving, tx, sigma2: float) -> np.ndarray:
    D, I = split_effective(effective_channels(H, serving, tx))
    return mmse_from_effective(D, I, sigma2)


def mse_matrices(H, serving, tx, rx, sigma2: float) -> np.ndarray:
    D, I = split_effective(effective_channels(H, serving, tx))
    return mse_from_effective(D, I, rx, sigma2)


def user_rate(H, serving, tx, u: int, n: int, sigma2: float) -> float:
    """Rate of user ``u`` on sub-channel ``n`` (bits/s/Hz); 0 when its beamformer is zero."""
    _check_shapes(H, serving, tx)
    D, I = _user_effective(H, serving, tx, u, n)
    return float(rate_from_effective(D, I, sigma2))


def mmse_receiver(H, serving, tx, u: int, n: int, sigma2: float) -> np.ndarray:
    _check_shapes(H, serving, tx)
    D, I = _user_effective(H, serving, tx, u, n)
    return mmse_from_effective(D, I, sigma2)


def mse_matrix(H, serving, tx, rx_un, u: int, n: int, sigma2: float) -> np.ndarray:
    _check_shapes(H, serving, tx)
    D, I = _user_effective(H, serving, tx, u, n)
    return mse_from_effective(D, I, rx_un, sigma2)


def _user_effective(H, serving, tx, u, n):
    F = np.stack([H[serving[i], u, n] @ tx[i, n] for i in range(tx.shape[0])])
    D = F[u].copy()
    F[u] = 0.0
    return D, F


def _check_shapes(H, serving, tx):
    B, U, N, NR, NT = H.shape
    if tx.shape[:3] != (U, N, NT) or len(serving) != U:
        raise ValueError(f"tx shape {tx.shape} inconsistent with channel shape {H.shape}")


@dataclass
class BeamformerSet:
    tx: np.ndarray  # (U, N, N_T, S)
    rx: np.ndarray  # (U, N, N_R, S)

    @classmethod
    def zeros(cls, U, N, NT, NR, S):
        return cls(np.zeros((U, N, NT, S), complex), np.zeros((U, N, NR, S), complex))

    def bs_power(self, serving: np.ndarray, B: int) -> np.ndarray:
        p = np.sum(np.abs(self.tx) ** 2, axis=(1, 2, 3))
        return np.bincount(serving, weights=p, minlength=B)
