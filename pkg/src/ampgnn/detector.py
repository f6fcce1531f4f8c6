"""Unfolded AMP-GNN: AMP linear step, MPNN refinement, pmf moments, repeat."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import amp
from .amp import NumericalError
from .mpnn import GraphContext, MpnnParams, gnn_forward
from .system import Constellation, LinearSystem

V_FLOOR = 1e-13


@dataclass
class AmpGnnConfig:
    constellation: Constellation
    params: MpnnParams
    T: int = 10
    L: int = 2

    def __post_init__(self):
        if self.T < 1 or self.L < 1:
            raise ValueError("T and L must be >= 1")
        if self.params.n_out != self.constellation.size:
            raise ValueError(f"readout emits {self.params.n_out} logits but the constellation "
                             f"has {self.constellation.size} PAM points per dimension")


@dataclass
class SoftOutput:
    pmf: np.ndarray
    x_hat: np.ndarray
    v_hat: np.ndarray

    def decisions(self) -> np.ndarray:
        return self.pmf.argmax(axis=-1)


@dataclass
class LayerRecord:
    r: np.ndarray
    Sigma: np.ndarray
    pmf: np.ndarray
    x_hat: np.ndarray
    v_hat: np.ndarray


@dataclass
class ForwardTape:
    """Everything the reverse pass needs, one entry per unfolded layer."""

    ctx: GraphContext
    amp: list = field(default_factory=list)
    gnn: list = field(default_factory=list)
    pmf: list = field(default_factory=list)
    x_hat: list = field(default_factory=list)
    v_raw: list = field(default_factory=list)


def softmax_pmf(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=float)
    z = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def refine_with_prior(logits, constellation: Constellation) -> np.ndarray:
    """Multiply the readout distribution by the prior and renormalise.

    For the default uniform prior this leaves the pmf unchanged.
    """
    return softmax_pmf(np.asarray(logits) + constellation.log_prior)


def moments_from_pmf(pmf, constellation: Constellation):
    return amp.pmf_moments(np.asarray(pmf, dtype=float), constellation.pam_points)


def forward_batch(H, y, s2, config: AmpGnnConfig, tape: ForwardTape | None = None,
                  readout_override=None, record=False):
    """Run the detector on a batch of real-embedded systems.

    ``readout_override(u, r, Sigma)`` replaces the readout MLP when given.
    Returns the final :class:`SoftOutput` and, with ``record``, a list of
    :class:`LayerRecord`.
    """
    const = config.constellation
    pts = const.pam_points
    keep = tape is not None
    ctx = GraphContext.build(H, y, s2) if tape is None else tape.ctx
    H2 = H * H
    x_hat, v_hat, Z, V = amp.amp_init(H, y, s2)
    carry = None
    records = []
    for t in range(1, config.T + 1):
        out = amp.linear_step(H, H2, y, s2, x_hat, v_hat, Z, V, layer=t, cache=keep)
        if keep:
            (r, Sigma, Z, V), saved = out
            tape.amp.append(saved)
        else:
            r, Sigma, Z, V = out
        d = np.stack([r, Sigma], axis=-1)
        hook = None
        if readout_override is not None:
            hook = lambda u, r=r, Sigma=Sigma: readout_override(u, r, Sigma)  # noqa: E731
        gc = {} if keep else None
        logits, carry = gnn_forward(ctx, d, carry, config.params, config.L, gc, hook)
        pmf = refine_with_prior(logits, const)
        x_hat, v_raw = amp.pmf_moments(pmf, pts)
        v_hat = np.maximum(v_raw, V_FLOOR)
        if not (np.all(np.isfinite(x_hat)) and np.all(np.isfinite(v_hat))):
            raise NumericalError("non-finite GNN posterior", t)
        if keep:
            tape.gnn.append(gc)
            tape.pmf.append(pmf)
            tape.x_hat.append(x_hat)
            tape.v_raw.append(v_raw)
        if record:
            records.append(LayerRecord(r, Sigma, pmf, x_hat, v_hat))
    result = SoftOutput(pmf=pmf, x_hat=x_hat, v_hat=v_hat)
    if record:
        return result, records
    return result


def amp_gnn_detect(system: LinearSystem, config: AmpGnnConfig, readout_override=None):
    """Detect one system; returns ``(SoftOutput, trajectory, op_count)``."""
    from .bench import count_ops

    H = system.H_real[None]
    y = system.y_real[None]
    s2 = np.array([system.sigma2_real])
    out, records = forward_batch(H, y, s2, config, readout_override=readout_override, record=True)
    soft = SoftOutput(out.pmf[0], out.x_hat[0], out.v_hat[0])
    traj = [LayerRecord(*(getattr(r, f)[0] for f in ("r", "Sigma", "pmf", "x_hat", "v_hat")))
            for r in records]
    p = config.params
    ops = count_ops(system.M, system.N, config.constellation.order, config.T, config.L,
                    sizes=(p.n_u, p.n_h1, p.n_h2))
    return soft, traj, ops


def amp_denoiser_readout(constellation: Constellation):
    """Readout stand-in returning the AMP denoiser's log-posterior."""

    def stub(u, r, Sigma):
        pmf = amp.posterior_pmf(r, Sigma, constellation)
        with np.errstate(divide="ignore"):
            return np.log(pmf) - constellation.log_prior

    return stub
