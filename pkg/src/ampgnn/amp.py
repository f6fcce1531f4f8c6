"""AMP detector on the real-embedded system, with the discrete-prior denoiser.

All kernels are batched over a leading sample axis: channels are
``(B, 2M, 2N)``, vectors ``(B, 2M)`` or ``(B, 2N)``, noise variances ``(B,)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .system import Constellation, LinearSystem


class NumericalError(ArithmeticError):
    """A detector produced a non-finite intermediate."""

    def __init__(self, message: str, layer: int | None = None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


@dataclass
class AmpState:
    x_hat: np.ndarray
    v_hat: np.ndarray
    Z: np.ndarray
    V: np.ndarray
    r: np.ndarray | None = None
    Sigma: np.ndarray | None = None
    t: int = 0


def _check_finite(layer, **arrays):
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite {name}", layer)


# --------------------------------------------------------------------- denoiser

def posterior_pmf(r, Sigma, constellation: Constellation) -> np.ndarray:
    """Posterior over the PAM alphabet for ``r = x + w``, ``w ~ N(0, Sigma)``.

    Log-domain with max subtraction, so it stays exact for very small
    ``Sigma``.  Output has a trailing axis of length ``sqrt(Q)``.
    """
    r = np.asarray(r, dtype=float)[..., None]
    Sigma = np.asarray(Sigma, dtype=float)[..., None]
    s = constellation.pam_points
    logw = -((s - r) ** 2) / (2.0 * Sigma) + constellation.log_prior
    logw -= logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=-1, keepdims=True)


def pmf_moments(pmf, points) -> tuple[np.ndarray, np.ndarray]:
    mean = pmf @ points
    # sum p (s - m)^2 equals E[s^2] - m^2 without the cancellation
    var = np.einsum("...k,...k->...", pmf, (points - mean[..., None]) ** 2)
    return mean, var


def denoise_pam(r, Sigma, constellation: Constellation) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of one real dimension given ``(r, Sigma)``."""
    if np.any(np.asarray(Sigma) <= 0):
        raise ValueError("Sigma must be positive")
    pmf = posterior_pmf(r, Sigma, constellation)
    pts = constellation.pam_points
    if not np.array_equal(constellation.prior, constellation.prior[::-1]):
        return pmf_moments(pmf, pts)
    mean = _symmetric_mean(np.asarray(r, dtype=float), np.asarray(Sigma, dtype=float), pmf, pts)
    var = np.einsum("...k,...k->...", pmf, (pts - mean[..., None]) ** 2)
    return mean, var


def _symmetric_mean(r, Sigma, pmf, pts):
    """Mean over a symmetric alphabet and prior, free of cancellation near ``r = 0``.

    Mirrored points ``+-s`` contribute ``s (p+ - p-)``; the larger of the two
    times ``-expm1(-2 s |r| / Sigma)`` is that difference, up to sign(r).
    """
    half = pts.size // 2
    s = pts[half:]
    hi = np.maximum(pmf[..., half:], pmf[..., :half][..., ::-1])
    gap = -np.expm1(-2.0 * s * np.abs(r)[..., None] / Sigma[..., None])
    return np.sign(r) * np.einsum("...k,k->...", hi * gap, s)


# ------------------------------------------------------------------ linear step

def linear_step(H, H2, y, s2, x_hat, v_hat, Z_prev, V_prev, layer=None, cache=False):
    """Matched-filter module of AMP: returns ``r, Sigma, Z, V``.

    ``H2`` is ``H**2`` (precomputed once per channel).  The Onsager term
    uses the current ``V`` over the previous ``s2 + V``.
    """
    s2 = np.asarray(s2, dtype=float)[:, None]
    V = np.einsum("bmn,bn->bm", H2, v_hat)
    P = y - Z_prev
    Qd = s2 + V_prev
    Z = np.einsum("bmn,bn->bm", H, x_hat) - V * P / Qd
    D = s2 + V
    S = np.einsum("bmn,bm->bn", H2, 1.0 / D)
    Sigma = 1.0 / S
    e = (y - Z) / D
    c = np.einsum("bmn,bm->bn", H, e)
    r = x_hat + Sigma * c
    _check_finite(layer, r=r, Sigma=Sigma, Z=Z, V=V)
    if not cache:
        return r, Sigma, Z, V
    saved = dict(H=H, H2=H2, V=V, P=P, Qd=Qd, D=D, Sigma=Sigma, e=e, c=c)
    return (r, Sigma, Z, V), saved


def linear_step_backward(d_r, d_Sigma, d_Z, d_V, saved):
    """Reverse pass of :func:`linear_step`.

    Takes gradients on ``(r, Sigma, Z, V)`` and returns gradients on
    ``(x_hat, v_hat, Z_prev, V_prev)``.
    """
    H, H2 = saved["H"], saved["H2"]
    V, P, Qd, D = saved["V"], saved["P"], saved["Qd"], saved["D"]
    Sigma, e, c = saved["Sigma"], saved["e"], saved["c"]

    d_x = d_r.copy()
    d_c = d_r * Sigma
    d_Sig = d_Sigma + d_r * c
    d_e = np.einsum("bmn,bn->bm", H, d_c)
    d_Z = d_Z - d_e / D
    d_D = -d_e * e / D
    d_S = -d_Sig * Sigma**2
    d_invD = np.einsum("bmn,bn->bm", H2, d_S)
    d_D = d_D - d_invD / D**2
    d_V = d_V + d_D
    d_x += np.einsum("bmn,bm->bn", H, d_Z)
    d_V = d_V - d_Z * P / Qd
    d_Zprev = d_Z * V / Qd
    d_Vprev = d_Z * V * P / Qd**2
    d_v = np.einsum("bmn,bm->bn", H2, d_V)
    return d_x, d_v, d_Zprev, d_Vprev


def amp_init(H, y, s2=None):
    """Starting point: ``x_hat = 0``, ``v_hat = N/(2M)`` per real dim, ``Z = y``."""
    B, M2, N2 = H.shape
    x_hat = np.zeros((B, N2))
    v_hat = np.full((B, N2), N2 / (2.0 * M2))
    # V_prev only multiplies (y - Z_prev) = 0 on the first layer
    return x_hat, v_hat, y.copy(), np.zeros((B, M2))


# -------------------------------------------------------------------- detectors

def amp_detect_batch(H, y, s2, constellation: Constellation, T: int = 10, trajectory=False):
    """Run ``T`` AMP layers on a batch; returns ``x_hat, v_hat`` (and states)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    H2 = H * H
    x_hat, v_hat, Z, V = amp_init(H, y, s2)
    states = []
    for t in range(1, T + 1):
        r, Sigma, Z, V = linear_step(H, H2, y, s2, x_hat, v_hat, Z, V, layer=t)
        x_hat, v_hat = denoise_pam(r, Sigma, constellation)
        _check_finite(t, x_hat=x_hat, v_hat=v_hat)
        if trajectory:
            states.append(AmpState(x_hat, v_hat, Z, V, r, Sigma, t))
    if trajectory:
        return x_hat, v_hat, states
    return x_hat, v_hat


def amp_detect(system: LinearSystem, constellation: Constellation, T: int = 10):
    """Single-system AMP; returns ``(x_hat, v_hat, trajectory)`` in real coordinates."""
    H = system.H_real[None]
    y = system.y_real[None]
    s2 = np.array([system.sigma2_real])
    x_hat, v_hat, states = amp_detect_batch(H, y, s2, constellation, T, trajectory=True)
    traj = [AmpState(s.x_hat[0], s.v_hat[0], s.Z[0], s.V[0], s.r[0], s.Sigma[0], s.t) for s in states]
    return x_hat[0], v_hat[0], traj


def hard_decision(x_hat, constellation: Constellation) -> np.ndarray:
    return constellation.nearest(x_hat)


def amp_detect_complex(system: LinearSystem, constellation: Constellation, T: int = 10):
    """Algorithm in complex arithmetic with the 2-D QAM denoiser.

    Kept as a cross-check of the real-embedded path; returns complex
    ``x_hat`` and per-symbol variance.
    """
    A, y, s2 = system.H, system.y, system.sigma2
    M, N = A.shape
    A2 = np.abs(A) ** 2
    pts = constellation.complex_points
    prior = np.outer(constellation.prior, constellation.prior).ravel()
    x_hat = np.zeros(N, dtype=complex)
    v_hat = np.full(N, N / M)
    Z = y.copy()
    V_prev = np.zeros(M)
    for t in range(1, T + 1):
        V = A2 @ v_hat
        Z = A @ x_hat - V * (y - Z) / (s2 + V_prev)
        D = s2 + V
        Sigma = 1.0 / (A2.T @ (1.0 / D))
        r = x_hat + Sigma * (A.conj().T @ ((y - Z) / D))
        logw = -np.abs(pts[None, :] - r[:, None]) ** 2 / Sigma[:, None] + np.log(prior)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        w /= w.sum(axis=1, keepdims=True)
        x_hat = w @ pts
        v_hat = w @ np.abs(pts) ** 2 - np.abs(x_hat) ** 2
        V_prev = V
        _check_finite(t, x_hat=x_hat, v_hat=v_hat)
    return x_hat, np.maximum(v_hat, 0.0)
