"""End-to-end training of the shared MPNN parameters through all unfolded layers."""

from __future__ import annotations

import logging
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import amp
from .amp import NumericalError
from .checkpoint import Checkpoint, save_checkpoint
from .detector import V_FLOOR, AmpGnnConfig, ForwardTape, forward_batch
from .mpnn import GraphContext, MpnnParams, gnn_backward, init_params
from .system import Batch, draw_batch, make_constellation

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    M: int = 16
    N: int = 16
    Q: int = 4
    T: int = 10
    L: int = 2
    epochs: int = 30
    samples_per_epoch: int = 20000
    batch_size: int = 64
    learning_rate: float = 1e-3
    train_snr_db: float = 20.0
    val_samples: int = 2000
    seed: int = 0
    # user counts to cycle through batch by batch; empty means just N
    train_users: tuple = ()

    def __post_init__(self):
        for name in ("M", "N", "Q", "T", "L", "epochs", "samples_per_epoch", "batch_size", "val_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size > self.samples_per_epoch:
            raise ValueError("batch_size exceeds samples_per_epoch")
        self.train_users = tuple(int(n) for n in self.train_users)
        if any(n > self.M or n < 1 for n in self.users):
            raise ValueError("every training user count must lie in [1, M]")

    @property
    def users(self) -> tuple:
        return self.train_users or (self.N,)


def loss_l2(x_hat, x_true) -> float:
    """Squared Euclidean error, averaged over the batch axis when present."""
    diff = np.asarray(x_hat, dtype=float) - np.asarray(x_true, dtype=float)
    if diff.ndim == 1:
        return float(diff @ diff)
    return float(np.mean(np.sum(diff**2, axis=-1)))


def backward(batch: Batch, params: MpnnParams, config: AmpGnnConfig, H_seen=None):
    """Mean per-sample L2 loss and its exact gradient for every parameter tensor."""
    H = batch.H if H_seen is None else H_seen
    const = config.constellation
    pts = const.pam_points
    tape = ForwardTape(ctx=GraphContext.build(H, batch.y, batch.sigma2))
    out = forward_batch(H, batch.y, batch.sigma2, config, tape=tape)
    B = len(batch)
    diff = out.x_hat - batch.x
    loss = float(np.sum(diff**2) / B)

    grads = params.zeros_like()
    d_x = 2.0 * diff / B
    d_v = np.zeros_like(d_x)
    d_Z = np.zeros_like(batch.y)
    d_V = np.zeros_like(batch.y)
    d_u = d_g = 0.0
    for t in range(config.T - 1, -1, -1):
        pmf, x_hat, v_raw = tape.pmf[t], tape.x_hat[t], tape.v_raw[t]
        d_v_raw = d_v * (v_raw > V_FLOOR)
        d_pmf = d_x[..., None] * pts + d_v_raw[..., None] * (pts - x_hat[..., None]) ** 2
        d_logits = pmf * (d_pmf - np.sum(pmf * d_pmf, axis=-1, keepdims=True))
        d_d, d_u, d_g = gnn_backward(d_logits, d_u, d_g, tape.gnn[t], tape.ctx, params, grads)
        d_x, d_v, d_Z, d_V = amp.linear_step_backward(d_d[..., 0], d_d[..., 1], d_Z, d_V, tape.amp[t])
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    return loss, grads


class Adam:
    def __init__(self, params: MpnnParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.step_count = 0

    def step(self, params: MpnnParams, grads):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] = params[name] - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_tensors(self):
        out = OrderedDict()
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state(self, tensors, step_count):
        for name in self.m:
            self.m[name] = tensors[f"adam.m.{name}"].copy()
            self.v[name] = tensors[f"adam.v.{name}"].copy()
        self.step_count = int(step_count)


def adam_step(params: MpnnParams, grads, state: Adam | None = None, lr=1e-3):
    """One Adam update; creates the moment state on first use."""
    if state is None:
        state = Adam(params, lr=lr)
    state.step(params, grads)
    return params, state


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    last: Checkpoint
    history: list = field(default_factory=list)


def _validation_set(cfg: TrainConfig, constellation):
    rng = np.random.default_rng([cfg.seed, 7_000_003])
    sets = []
    per = max(1, cfg.val_samples // len(cfg.users))
    for n in cfg.users:
        batch, _ = draw_batch(per, cfg.M, n, constellation, cfg.train_snr_db, rng)
        sets.append(batch)
    return sets


def evaluate(params: MpnnParams, batches, det: AmpGnnConfig, chunk=256):
    """Mean L2 loss and complex-symbol error rate over validation batches."""
    total_loss = 0.0
    errors = symbols = count = 0
    for batch in batches:
        for start in range(0, len(batch), chunk):
            sl = slice(start, start + chunk)
            out = forward_batch(batch.H[sl], batch.y[sl], batch.sigma2[sl], det)
            diff = out.x_hat - batch.x[sl]
            total_loss += float(np.sum(diff**2))
            count += diff.shape[0]
            wrong = out.decisions() != batch.labels[sl]
            n = wrong.shape[1] // 2
            errors += int(np.sum(wrong[:, :n] | wrong[:, n:]))
            symbols += wrong.shape[0] * n
    return total_loss / count, errors / symbols


def _checkpoint(params, cfg: TrainConfig, epoch, history, optimizer=None):
    meta = {"epoch": epoch, "seed": cfg.seed, "train": asdict(cfg), "history": history}
    extra = OrderedDict()
    if optimizer is not None:
        extra = optimizer.state_tensors()
        meta["adam_step"] = optimizer.step_count
    return Checkpoint(params=params.copy(), T=cfg.T, L=cfg.L, meta=meta, extra=extra)


def train(cfg: TrainConfig, resume: Checkpoint | None = None, progress=None,
          snapshot_path=None) -> TrainResult:
    """Minibatch Adam on freshly drawn data every epoch.

    Epoch ``e`` draws from ``default_rng([seed, e])`` so a resumed run
    replays exactly the batches the uninterrupted run would have seen.
    The returned ``checkpoint`` is the one with the lowest validation loss.
    With ``snapshot_path`` the full state (Adam moments included) is
    written after every epoch for :func:`train` ``resume=``.
    """
    const = make_constellation(cfg.Q)
    if resume is None:
        params = init_params(const.size, seed=cfg.seed)
        optimizer = Adam(params, lr=cfg.learning_rate)
        start, history = 0, []
    else:
        params = resume.params.copy()
        optimizer = Adam(params, lr=cfg.learning_rate)
        if resume.extra:
            optimizer.load_state(resume.extra, resume.meta.get("adam_step", 0))
        start = int(resume.meta["epoch"])
        history = list(resume.meta.get("history", []))
    det = AmpGnnConfig(const, params, cfg.T, cfg.L)
    val_sets = _validation_set(cfg, const)
    best = None
    best_loss = min((h["val_loss"] for h in history), default=np.inf)
    users = cfg.users
    n_batches = cfg.samples_per_epoch // cfg.batch_size

    for epoch in range(start + 1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        tic = time.perf_counter()
        running = 0.0
        for k in range(n_batches):
            n = users[k % len(users)]
            batch, _ = draw_batch(cfg.batch_size, cfg.M, n, const, cfg.train_snr_db, rng)
            loss, grads = backward(batch, params, det)
            if not np.isfinite(loss):
                raise NumericalError(f"training diverged in epoch {epoch}")
            optimizer.step(params, grads)
            running += loss
        val_loss, val_ser = evaluate(params, val_sets, det)
        entry = {"epoch": epoch, "train_loss": running / n_batches, "val_loss": val_loss,
                 "val_ser": val_ser, "seconds": round(time.perf_counter() - tic, 3)}
        history.append(entry)
        log.info("epoch %d train_loss %.5f val_loss %.5f val_ser %.3e", epoch,
                 entry["train_loss"], val_loss, val_ser)
        if progress is not None:
            progress(entry)
        if val_loss < best_loss:
            best_loss = val_loss
            best = _checkpoint(params, cfg, epoch, list(history))
        if snapshot_path is not None:
            save_checkpoint(_checkpoint(params, cfg, epoch, list(history), optimizer), snapshot_path)
    last = _checkpoint(params, cfg, cfg.epochs, list(history), optimizer)
    if best is None:
        best = resume if resume is not None else last
    best.meta["history"] = list(history)
    return TrainResult(checkpoint=best, last=last, history=history)
