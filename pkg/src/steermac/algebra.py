"""
Complex linear-algebra primitives for steering-vector multiaccess.

Matrices are plain ``numpy`` complex128 arrays, slots index rows and symbols
index columns. Everything here is a pure function of its inputs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, InvalidShiftError, SingularSystemError

UNIT_TOL = 1e-12
COND_LIMIT = 1e12


def shift(v, d):
    """Shift a vector by ``d`` positions, filling vacated entries with zeros.

    ``d > 0`` prepends ``d`` zeros and drops the tail, ``d < 0`` drops the
    first ``|d|`` entries and appends zeros.

    Parameters
    ----------
    v : array_like
        1-D vector of length L.
    d : int
        Shift amount, ``1 - L <= d <= L - 1``.

    Returns
    -------
    numpy.ndarray
        New vector of length L with the dtype of ``v``.
    """
    v = np.asarray(v)
    L = v.shape[0]
    d = int(d)
    if abs(d) >= max(L, 1):
        raise InvalidShiftError(f"shift {d} out of range for length {L}")
    out = np.zeros_like(v)
    if d > 0:
        out[d:] = v[: L - d]
    elif d < 0:
        out[: L + d] = v[-d:]
    else:
        out[:] = v
    return out


@dataclass(frozen=True)
class SteeringVector:
    """Geometric sequence ``[r^0, ..., r^(N-1)]`` shifted down by ``shift`` slots."""

    root: complex
    length: int
    shift: int
    entries: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def _check_unit(r):
    r = complex(r)
    if abs(abs(r) - 1.0) > UNIT_TOL:
        raise DomainError(f"root {r} is not on the unit circle (|r| = {abs(r)!r})")
    return r


def powers(r, N):
    """Return ``[r^0, r^1, ..., r^(N-1)]`` computed from the angle of ``r``."""
    r = complex(r)
    return np.exp(1j * np.angle(r) * np.arange(N))


def make_steering_vector(r, N, d=0):
    r = _check_unit(r)
    N = int(N)
    if N < 1:
        raise DimensionError("steering vector length must be >= 1")
    if not 0 <= d <= N - 1:
        raise InvalidShiftError(f"steering shift {d} outside [0, {N - 1}]")
    entries = shift(powers(r, N), d)
    entries.setflags(write=False)
    return SteeringVector(root=r, length=N, shift=int(d), entries=entries)


def factor2_weights(L):
    """Per-position weights: 1 at odd 1-based positions, 2 at even ones."""
    w = np.ones(L)
    w[1::2] = 2.0
    return w


def apply_factor2(w):
    """Double the entries at even 1-based positions (n = 2, 4, ...)."""
    w = np.asarray(w, dtype=complex)
    return w * factor2_weights(w.shape[0])


@dataclass(frozen=True)
class SubspaceSplit:
    """Left singular basis of a received matrix split at ``rank``.

    Attributes
    ----------
    signal_basis : ndarray, shape (N, rank)
    noise_basis : ndarray, shape (N, N - rank)
    singular_values : ndarray, shape (N,)
        Descending; zero-padded when the matrix has fewer columns than rows.
    rank : int
    """

    signal_basis: np.ndarray
    noise_basis: np.ndarray
    singular_values: np.ndarray
    rank: int


def svd_split(Y, K):
    """Full SVD of ``Y`` with the left basis split after the ``K`` largest values."""
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim != 2:
        raise DimensionError("expected a 2-D matrix")
    N = Y.shape[0]
    K = int(K)
    if not 0 <= K <= N:
        raise DimensionError(f"signal dimension {K} outside [0, {N}]")
    U, s, _ = np.linalg.svd(Y, full_matrices=True)
    values = np.zeros(N)
    values[: s.shape[0]] = s
    return SubspaceSplit(
        signal_basis=U[:, :K],
        noise_basis=U[:, K:],
        singular_values=values,
        rank=K,
    )


def _check_conditioning(W):
    if W.shape[1] > W.shape[0]:
        raise SingularSystemError(f"{W.shape[1]} columns exceed {W.shape[0]} rows")
    s = np.linalg.svd(W, compute_uv=False)
    if s.size == 0 or s[-1] == 0 or s[0] / s[-1] > COND_LIMIT:
        cond = np.inf if s.size == 0 or s[-1] == 0 else s[0] / s[-1]
        raise SingularSystemError(f"steering matrix condition number {cond:.3g} exceeds {COND_LIMIT:g}")


def least_squares_decode(W, Y):
    """Least-squares packet estimate ``(W^H W)^-1 W^H Y`` via QR of ``W``."""
    W = np.asarray(W, dtype=complex)
    Y = np.asarray(Y, dtype=complex)
    if W.ndim != 2 or Y.ndim != 2 or W.shape[0] != Y.shape[0]:
        raise DimensionError(f"incompatible shapes {W.shape} and {Y.shape}")
    _check_conditioning(W)
    Q, R = np.linalg.qr(W)
    return np.linalg.solve(R, Q.conj().T @ Y)


def real_least_squares_decode(W, Y):
    """Least-squares estimate constrained to real-valued packets.

    Stacks real and imaginary parts, so ``[Re W; Im W] S = [Re Y; Im Y]`` is
    solved over the reals. Only valid when every packet symbol is real.
    """
    W = np.asarray(W, dtype=complex)
    Y = np.asarray(Y, dtype=complex)
    if W.ndim != 2 or Y.ndim != 2 or W.shape[0] != Y.shape[0]:
        raise DimensionError(f"incompatible shapes {W.shape} and {Y.shape}")
    _check_conditioning(W)
    Wr = np.vstack([W.real, W.imag])
    Yr = np.vstack([Y.real, Y.imag])
    Q, R = np.linalg.qr(Wr)
    return np.linalg.solve(R, Q.T @ Yr).astype(complex)
