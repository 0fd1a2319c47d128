"""LTI plant dynamics, LQG controller gain, and remote state estimation.

Each control loop is a discrete-time linear system

    x[k+1] = A x[k] + B u[k] + w[k],   w[k] ~ N(0, Sigma)

regulated toward the origin by u[k] = -L xhat[k], where L comes from the
discrete algebraic Riccati equation and xhat is reconstructed remotely
from the last received state sample plus the applied input history.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, InvariantError, SolverError

# State magnitudes past this ceiling mark the loop as diverged; values are
# saturated (not aborted) so the run still produces a full-length trace and
# a finite, huge cost.
DIVERGENCE_CEILING = 1e9

_SYM_TOL = 1e-9


def _as_matrix(value, name: str) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(value, dtype=float))
    if mat.ndim != 2:
        raise ConfigurationError(f"{name} must be a 2-D matrix, got shape {mat.shape}")
    return mat


def _check_symmetric(mat: np.ndarray, name: str) -> None:
    if mat.shape[0] != mat.shape[1] or not np.allclose(mat, mat.T, atol=_SYM_TOL):
        raise ConfigurationError(f"{name} must be symmetric, got shape {mat.shape}")


def _check_psd(mat: np.ndarray, name: str, strict: bool = False) -> None:
    _check_symmetric(mat, name)
    eigvals = np.linalg.eigvalsh(mat)
    if strict:
        if np.any(eigvals <= 0.0):
            raise ConfigurationError(f"{name} must be positive definite (eigvals {eigvals})")
    elif np.any(eigvals < -1e-10):
        raise ConfigurationError(f"{name} must be positive semi-definite (eigvals {eigvals})")


class SystemMatrices:
    """Per-loop LTI and cost parameters (A, B, Sigma, Q, R).

    Scalars are accepted anywhere a matrix is expected and promoted to 1x1.
    """

    def __init__(self, A, B, Sigma, Q, R):
        self.A = _as_matrix(A, "A")
        self.B = _as_matrix(B, "B")
        self.Sigma = _as_matrix(Sigma, "Sigma")
        self.Q = _as_matrix(Q, "Q")
        self.R = _as_matrix(R, "R")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ConfigurationError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise ConfigurationError(f"B must have {n} rows, got {self.B.shape}")
        m = self.B.shape[1]
        if self.Q.shape != (n, n):
            raise ConfigurationError(f"Q must be {n}x{n}, got {self.Q.shape}")
        if self.R.shape != (m, m):
            raise ConfigurationError(f"R must be {m}x{m}, got {self.R.shape}")
        if self.Sigma.shape != (n, n):
            raise ConfigurationError(f"Sigma must be {n}x{n}, got {self.Sigma.shape}")
        _check_psd(self.Q, "Q")
        _check_psd(self.R, "R", strict=True)
        _check_psd(self.Sigma, "Sigma")
        self.n = n
        self.m = m
        # Factor of Sigma used to color unit-normal draws; eigh handles the
        # semi-definite case where Cholesky would fail.
        eigvals, eigvecs = np.linalg.eigh(self.Sigma)
        self._noise_factor = eigvecs @ np.diag(np.sqrt(np.clip(eigvals, 0.0, None)))

    @property
    def is_scalar(self) -> bool:
        return self.n == 1 and self.m == 1

    def __repr__(self):
        return (f"SystemMatrices(n={self.n}, m={self.m}, "
                f"A={self.A.tolist()}, B={self.B.tolist()})")


class Gain:
    """DARE fixed point P and the associated feedback gain L."""

    def __init__(self, L: np.ndarray, P: np.ndarray):
        self.L = np.atleast_2d(np.asarray(L, dtype=float))
        self.P = np.atleast_2d(np.asarray(P, dtype=float))


def solve_dare(sys: SystemMatrices, tol: float = 1e-10, max_iter: int = 10 ** 6,
               label: str = "") -> Gain:
    """Solve the discrete algebraic Riccati equation by value iteration.

    Iterates P <- A'PA - A'PB (R + B'PB)^-1 B'PA + Q from P = Q until the
    update moves less than `tol`, then checks the fixed-point residual and
    that the closed loop A - B L is Schur stable.
    """
    if tol <= 0.0:
        raise ConfigurationError("tol must be positive")
    A, B, Q, R = sys.A, sys.B, sys.Q, sys.R

    def _iterate(P):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        return A.T @ P @ A - A.T @ P @ B @ gain + Q, gain

    P = Q.copy()
    for _ in range(max_iter):
        P_next, _ = _iterate(P)
        if np.max(np.abs(P_next - P)) <= tol:
            P = P_next
            break
        P = P_next
    else:
        where = f" for loop {label}" if label else ""
        raise SolverError(f"Riccati iteration did not converge within {max_iter} steps{where}")

    P_check, L = _iterate(P)
    residual = np.max(np.abs(P - P_check))
    if residual > 10 * tol:
        where = f" for loop {label}" if label else ""
        raise SolverError(f"Riccati residual {residual:.3e} exceeds tolerance{where}")
    closed_loop = A - B @ L
    radius = np.max(np.abs(np.linalg.eigvals(closed_loop)))
    if radius >= 1.0:
        where = f" for loop {label}" if label else ""
        raise SolverError(f"closed loop unstable (spectral radius {radius:.6f}){where}")
    return Gain(L=L, P=P)


def step_plant(x: np.ndarray, u: np.ndarray, w: np.ndarray, sys: SystemMatrices) -> np.ndarray:
    """One step of x' = A x + B u + w."""
    x = np.asarray(x, dtype=float).reshape(sys.n)
    u = np.asarray(u, dtype=float).reshape(sys.m)
    w = np.asarray(w, dtype=float).reshape(sys.n)
    return sys.A @ x + sys.B @ u + w


def sample_noise(rng: np.random.Generator, sys: SystemMatrices) -> np.ndarray:
    """Zero-mean Gaussian draw with covariance Sigma from the given stream."""
    z = rng.standard_normal(sys.n)
    return sys._noise_factor @ z


def control_input(x_hat: np.ndarray, gain: Gain) -> np.ndarray:
    """u = -L xhat."""
    return -(gain.L @ np.asarray(x_hat, dtype=float).reshape(-1))


def stage_cost(x: np.ndarray, u: np.ndarray, sys: SystemMatrices) -> float:
    """Quadratic per-step penalty x'Qx + u'Ru."""
    x = np.asarray(x, dtype=float).reshape(sys.n)
    u = np.asarray(u, dtype=float).reshape(sys.m)
    return float(x @ sys.Q @ x + u @ sys.R @ u)


def estimate_state(x_nu: np.ndarray, nu: int, k: int, inputs, sys: SystemMatrices) -> np.ndarray:
    """Closed-form remote estimate from the sample generated at step nu.

    xhat[k] = A^D x[nu] + sum_{q=1..D} A^(q-1) B u[k-q]  with D = k - nu.
    `inputs` must provide u[j] for j in [nu, k-1] via inputs[j].
    """
    delta = k - nu
    if delta < 0:
        raise InvariantError(f"estimate requested for k={k} before sample step nu={nu}")
    xhat = np.asarray(x_nu, dtype=float).reshape(sys.n).copy()
    for j in range(nu, k):
        try:
            u = inputs[j]
        except (IndexError, KeyError) as exc:
            raise InvariantError(f"input history missing step {j}") from exc
        xhat = sys.A @ xhat + sys.B @ np.asarray(u, dtype=float).reshape(sys.m)
    return xhat


def saturate(vec: np.ndarray, ceiling: float = DIVERGENCE_CEILING):
    """Scale `vec` down onto the divergence ceiling if its norm exceeds it.

    Returns (vec, was_saturated). Keeps downstream arithmetic finite so a
    diverged loop still yields a full trace with a huge cost.
    """
    norm = float(np.linalg.norm(vec))
    if not np.isfinite(norm):
        cleaned = np.where(np.isfinite(vec), vec, 0.0)
        cnorm = float(np.linalg.norm(cleaned))
        if cnorm == 0.0:
            cleaned = np.ones_like(vec)
            cnorm = float(np.linalg.norm(cleaned))
        return cleaned * (ceiling / cnorm), True
    if norm > ceiling:
        return vec * (ceiling / norm), True
    return vec, False


class RemoteEstimator:
    """Incremental form of the remote estimate with reset-and-replay.

    Between packet arrivals the estimate propagates as
    xhat[k+1] = A xhat[k] + B u[k]; when a fresher sample (x[nu], nu)
    arrives it is rebuilt by replaying the stored inputs from nu to the
    current step. Both forms agree with `estimate_state` to rounding.
    """

    def __init__(self, sys: SystemMatrices, horizon: int, ceiling: float = DIVERGENCE_CEILING):
        self.sys = sys
        self.ceiling = ceiling
        self.xhat = np.zeros(sys.n)
        self.last_state = np.zeros(sys.n)
        self.last_nu = 0
        self.inputs = np.zeros((horizon + 1, sys.m))
        self.saturated = False

    def apply_packet(self, payload: np.ndarray, nu: int, k: int) -> None:
        """Install the sample generated at step nu; replay inputs up to k."""
        if nu < self.last_nu:
            return
        self.last_state = np.asarray(payload, dtype=float).reshape(self.sys.n).copy()
        self.last_nu = nu
        xhat = self.last_state.copy()
        A, B = self.sys.A, self.sys.B
        for j in range(nu, k):
            xhat = A @ xhat + B @ self.inputs[j]
            xhat, sat = saturate(xhat, self.ceiling)
            self.saturated |= sat
        self.xhat = xhat

    def record_input(self, k: int, u: np.ndarray) -> None:
        self.inputs[k] = np.asarray(u, dtype=float).reshape(self.sys.m)

    def propagate(self, k: int) -> None:
        """Advance xhat across step k using the input recorded at k."""
        self.xhat = self.sys.A @ self.xhat + self.sys.B @ self.inputs[k]
        self.xhat, sat = saturate(self.xhat, self.ceiling)
        self.saturated |= sat

    def age(self, k: int) -> int:
        delta = k - self.last_nu
        if delta < 0:
            raise InvariantError(f"negative age at step {k} (nu={self.last_nu})")
        return delta
