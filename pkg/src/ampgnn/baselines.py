"""Reference detectors (MMSE, OAMP) and exhaustive-enumeration oracles."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .amp import NumericalError, denoise_pam
from .system import Constellation, LinearSystem

ORACLE_LIMIT = 10**7
V_FLOOR = 1e-13


# ------------------------------------------------------------------------ MMSE

def mmse_batch(H, y, s2):
    """``(H^T H + 2 s2 I)^-1 H^T y`` on the real embedding.

    ``2 * s2`` is the complex noise variance, i.e. the noise-to-signal
    ratio per real dimension for unit-energy symbols.
    """
    N2 = H.shape[2]
    gram = np.einsum("bmi,bmj->bij", H, H)
    gram += (2.0 * np.asarray(s2))[:, None, None] * np.eye(N2)
    rhs = np.einsum("bmn,bm->bn", H, y)
    return np.linalg.solve(gram, rhs[..., None])[..., 0]


def mmse_detect(system: LinearSystem, constellation: Constellation | None = None):
    """Regularised pseudo-inverse estimate (complex) and, with a constellation, decisions."""
    H = system.H
    x_hat = np.linalg.solve(H.conj().T @ H + system.sigma2 * np.eye(system.N), H.conj().T @ system.y)
    if constellation is None:
        return x_hat
    real = np.concatenate([x_hat.real, x_hat.imag])
    return x_hat, constellation.nearest(real)


# ------------------------------------------------------------------------ OAMP

@dataclass
class OampState:
    x_hat: np.ndarray
    r: np.ndarray
    W: np.ndarray
    tau2: np.ndarray
    v2: np.ndarray
    decorrelation: np.ndarray
    x_next: np.ndarray


def oamp_batch(H, y, s2, constellation: Constellation, T: int = 10, trajectory=False):
    """OAMP with the de-correlated LMMSE linear estimator.

    Real domain, per real dimension (``M2 = 2M``, ``N2 = 2N``)::

        v2     = max((|y - A x|^2 - M2 s2) / tr(A^T A), floor)
        W      = N2 / tr(W_hat A) * W_hat,  W_hat = v2 A^T (v2 A A^T + s2 I)^-1
        r      = x + W (y - A x)
        tau2   = (tr(B B^T) v2 + tr(W W^T) s2) / N2,  B = I - W A
        x_post = E{x | r, tau2}  (with mean posterior variance v_post)
        x      = (tau2 x_post - v_post r) / (tau2 - v_post)

    The last line is the divergence-free form of the posterior mean; it
    keeps the next linear step's input error uncorrelated with the
    noise, which the residual-based ``v2`` relies on.  ``v2`` starts at
    the prior variance of one real dimension.  Returns the posterior
    mean ``x_post`` of the last iteration.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    B, M2, N2 = H.shape
    s2 = np.asarray(s2, dtype=float)
    eye_m = np.eye(M2)
    eye_n = np.eye(N2)
    AAT = np.einsum("bmi,bni->bmn", H, H)
    trAtA = np.einsum("bmn,bmn->b", H, H)
    x = np.zeros((B, N2))
    v2 = np.full(B, constellation.dim_variance)
    states = []
    for t in range(1, T + 1):
        resid = y - np.einsum("bmn,bn->bm", H, x)
        if t > 1:
            v2 = np.maximum((np.sum(resid**2, axis=1) - M2 * s2) / trAtA, V_FLOOR)
        C = v2[:, None, None] * AAT + s2[:, None, None] * eye_m
        # W_hat = v2 A^T C^-1  ->  solve C X = A, W_hat = v2 X^T
        W_hat = v2[:, None, None] * np.linalg.solve(C, H).transpose(0, 2, 1)
        tr_wa = np.einsum("bnm,bmn->b", W_hat, H)
        W = (N2 / tr_wa)[:, None, None] * W_hat
        Bm = eye_n - W @ H
        r = x + np.einsum("bnm,bm->bn", W, resid)
        tau2 = (np.einsum("bij,bij->b", Bm, Bm) * v2 + np.einsum("bij,bij->b", W, W) * s2) / N2
        x_post, v_post = denoise_pam(r, np.broadcast_to(tau2[:, None], r.shape), constellation)
        # posterior variance never exceeds tau2 in expectation; guard the ratio
        v_mean = np.minimum(v_post.mean(axis=1), tau2 * (1.0 - 1e-9))
        x = (tau2[:, None] * x_post - v_mean[:, None] * r) / (tau2 - v_mean)[:, None]
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(r))):
            raise NumericalError("non-finite OAMP estimate", t)
        if trajectory:
            states.append(OampState(x_post, r, W, tau2, v2, np.trace(Bm, axis1=1, axis2=2), x))
    if trajectory:
        return x_post, states
    return x_post


def oamp_detect(system: LinearSystem, constellation: Constellation, T: int = 10):
    """Returns ``(x_hat_real, decisions, trajectory)`` for one system."""
    x_hat, states = oamp_batch(system.H_real[None], system.y_real[None], np.array([system.sigma2_real]),
                               constellation, T, trajectory=True)
    return x_hat[0], constellation.nearest(x_hat[0]), states


# --------------------------------------------------------------------- oracles

@dataclass
class OracleResult:
    marginals: np.ndarray
    map_labels: np.ndarray
    evaluations: int


def _candidates(constellation: Constellation, dims: int) -> np.ndarray:
    """All label vectors in lexicographic order, shape ``(K**dims, dims)``."""
    return np.array(list(itertools.product(range(constellation.size), repeat=dims)), dtype=np.int64)


def _check_size(constellation: Constellation, dims: int):
    count = constellation.size**dims
    if count > ORACLE_LIMIT:
        raise ValueError(f"exhaustive search needs {count} evaluations; limit is {ORACLE_LIMIT}")
    return count


def _sq_dist(H, y, X):
    """``|y_b - H_b x_k|^2`` for every sample ``b`` and candidate row ``k``."""
    resid = np.matmul(H, X.T)
    resid -= y[:, :, None]
    resid *= resid
    return resid.sum(axis=1)


def _chunk(B, M2, requested):
    return max(1, min(requested, 2**22 // max(1, B * M2)))


def _log_joint(H, y, s2, constellation, cands):
    X = constellation.pam_points[cands]
    return -_sq_dist(H, y, X) / (2.0 * s2[:, None]) + np.sum(constellation.log_prior[cands], axis=1)


def oracle_marginals_batch(H, y, s2, constellation: Constellation, chunk=4096):
    """Exact per-dimension posterior marginals and the MAP label vector."""
    dims = H.shape[2]
    count = _check_size(constellation, dims)
    cands = _candidates(constellation, dims)
    s2 = np.asarray(s2, dtype=float)
    B = H.shape[0]
    K = constellation.size
    chunk = _chunk(B, H.shape[1], chunk)
    # streaming log-sum-exp over candidate blocks
    running_max = np.full(B, -np.inf)
    marg = np.zeros((B, dims, K))
    best = np.full(B, -np.inf)
    best_idx = np.zeros(B, dtype=np.int64)
    for start in range(0, count, chunk):
        block = cands[start:start + chunk]
        lj = _log_joint(H, y, s2, constellation, block)
        bmax = lj.max(axis=1)
        arg = lj.argmax(axis=1)
        better = bmax > best
        best = np.where(better, bmax, best)
        best_idx = np.where(better, start + arg, best_idx)
        new_max = np.maximum(running_max, bmax)
        marg *= np.exp(running_max - new_max)[:, None, None]
        w = np.exp(lj - new_max[:, None])
        onehot = np.zeros((block.shape[0], dims, K))
        np.put_along_axis(onehot, block[:, :, None], 1.0, axis=2)
        marg += np.einsum("bk,kdq->bdq", w, onehot)
        running_max = new_max
    marg /= marg.sum(axis=2, keepdims=True)
    return marg, cands[best_idx], count


def oracle_marginals(system: LinearSystem, constellation: Constellation) -> OracleResult:
    marg, labels, count = oracle_marginals_batch(system.H_real[None], system.y_real[None],
                                                 np.array([system.sigma2_real]), constellation)
    return OracleResult(marg[0], labels[0], count)


def map_batch(H, y, constellation: Constellation, chunk=4096):
    """Minimum-distance label vectors by exhaustive search."""
    dims = H.shape[2]
    count = _check_size(constellation, dims)
    cands = _candidates(constellation, dims)
    B = H.shape[0]
    chunk = _chunk(B, H.shape[1], chunk)
    best = np.full(B, np.inf)
    best_idx = np.zeros(B, dtype=np.int64)
    for start in range(0, count, chunk):
        block = cands[start:start + chunk]
        dist = _sq_dist(H, y, constellation.pam_points[block])
        arg = dist.argmin(axis=1)
        val = dist[np.arange(B), arg]
        better = val < best
        best = np.where(better, val, best)
        best_idx = np.where(better, start + arg, best_idx)
    return cands[best_idx]


def map_detect(system: LinearSystem, constellation: Constellation) -> np.ndarray:
    """Maximum-likelihood label vector (real dimensions) for one system."""
    return map_batch(system.H_real[None], system.y_real[None], constellation)[0]
