"""Monte-Carlo SER benchmarks, robustness protocols and multiplication counts."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .amp import amp_detect_batch
from .baselines import map_batch, mmse_batch, oamp_batch
from .checkpoint import Checkpoint
from .detector import AmpGnnConfig, forward_batch
from .system import Constellation, draw_batch, make_constellation

DETECTORS = ("mmse", "amp", "oamp", "map", "ampgnn")
CSV_COLUMNS = ("detector", "M", "N", "Q", "snr_db", "trials", "errors", "ser", "seed", "notes")
LOW_CONFIDENCE_ERRORS = 100


@dataclass
class BenchSpec:
    detectors: tuple = ("mmse", "amp")
    M: int = 16
    N: int = 16
    Q: int = 4
    snrs: tuple = (8.0, 10.0, 12.0)
    min_trials: int = 1000
    max_trials: int = 100000
    min_errors: int = 100
    seed: int = 0
    checkpoint: Checkpoint | None = None
    T: int = 10
    L: int = 2
    block: int = 256
    test_N: int | None = None
    channel_error_var: float = 0.0
    notes: str = ""

    def __post_init__(self):
        self.detectors = tuple(self.detectors)
        self.snrs = tuple(float(s) for s in self.snrs)
        bad = [d for d in self.detectors if d not in DETECTORS]
        if bad:
            raise ValueError(f"unknown detector(s) {bad}; choose from {DETECTORS}")
        if not self.snrs:
            raise ValueError("SNR grid is empty")
        if "ampgnn" in self.detectors and self.checkpoint is None:
            raise ValueError("the ampgnn detector needs a checkpoint")
        if self.min_trials < 1 or self.max_trials < self.min_trials:
            raise ValueError("need 1 <= min_trials <= max_trials")
        if self.channel_error_var < 0:
            raise ValueError("channel_error_var must be >= 0")
        if self.M < 1 or self.N < 1 or self.N > self.M:
            raise ValueError(f"need 1 <= N <= M, got {self.M}x{self.N}")


def _detector_fn(name: str, spec: BenchSpec, const: Constellation):
    if name == "mmse":
        return lambda H, y, s2: const.nearest(mmse_batch(H, y, s2))
    if name == "amp":
        return lambda H, y, s2: const.nearest(amp_detect_batch(H, y, s2, const, spec.T)[0])
    if name == "oamp":
        return lambda H, y, s2: const.nearest(oamp_batch(H, y, s2, const, spec.T))
    if name == "map":
        return lambda H, y, s2: map_batch(H, y, const)
    ckpt = spec.checkpoint
    cfg = AmpGnnConfig(const, ckpt.params, spec.T, spec.L)
    return lambda H, y, s2: forward_batch(H, y, s2, cfg).decisions()


def symbol_errors(decided, labels) -> int:
    """Complex symbols in error: either real dimension wrong."""
    wrong = np.asarray(decided) != np.asarray(labels)
    n = wrong.shape[-1] // 2
    return int(np.sum(wrong[..., :n] | wrong[..., n:]))


def run_point(spec: BenchSpec, snr_db: float, point: int, N: int | None = None):
    """Errors and trials per detector at one SNR.

    Block ``k`` of point ``p`` draws from ``default_rng([seed, p, k])``, so
    every detector sees the same transmissions and reruns are identical.
    Each detector stops once it has ``min_trials`` and ``min_errors``.
    """
    N = spec.N if N is None else N
    const = make_constellation(spec.Q)
    fns = {d: _detector_fn(d, spec, const) for d in spec.detectors}
    tally = {d: [0, 0] for d in spec.detectors}
    active = set(spec.detectors)
    k = 0
    while active:
        rng = np.random.default_rng([spec.seed, point, k])
        count = min(spec.block, spec.max_trials - k * spec.block)
        batch, H_seen = draw_batch(count, spec.M, N, const, snr_db, rng, spec.channel_error_var)
        H = batch.H if H_seen is None else H_seen
        for d in sorted(active):
            decided = fns[d](H, batch.y, batch.sigma2)
            tally[d][0] += count
            tally[d][1] += symbol_errors(decided, batch.labels)
        k += 1
        for d in list(active):
            trials, errors = tally[d]
            if trials >= spec.max_trials or (trials >= spec.min_trials and errors >= spec.min_errors):
                active.discard(d)
    return tally


def _row(spec, det, N, snr, trials, errors, extra=""):
    ser = errors / (trials * N)
    notes = [n for n in (spec.notes, extra) if n]
    if errors < LOW_CONFIDENCE_ERRORS:
        notes.append("low-confidence")
    return {"detector": det, "M": spec.M, "N": N, "Q": spec.Q, "snr_db": snr, "trials": trials,
            "errors": errors, "ser": ser, "seed": spec.seed, "notes": ";".join(notes)}


def run_ser_sweep(spec: BenchSpec, N: int | None = None, extra_note: str = "") -> list[dict]:
    N = spec.N if N is None else N
    rows = []
    for p, snr in enumerate(spec.snrs):
        tally = run_point(spec, snr, p, N)
        for d in spec.detectors:
            rows.append(_row(spec, d, N, snr, *tally[d], extra_note))
    return rows


def run_robustness_users(spec: BenchSpec) -> list[dict]:
    """Evaluate a checkpoint at a user count it was not trained on, next to AMP."""
    if spec.checkpoint is None:
        raise ValueError("robust-users needs a checkpoint")
    test_N = spec.test_N if spec.test_N is not None else spec.N
    if test_N > spec.M:
        raise ValueError(f"test_N={test_N} exceeds M={spec.M}; overloaded systems are not supported")
    trained = spec.checkpoint.meta.get("train", {})
    users = trained.get("train_users") or [trained.get("N")]
    note = "train_N=" + "+".join(str(u) for u in users if u is not None)
    dets = tuple(d for d in spec.detectors if d != "map") or ("ampgnn", "amp")
    sub = BenchSpec(**{**spec.__dict__, "detectors": dets, "N": test_N})
    return run_ser_sweep(sub, test_N, note)


def run_robustness_csi(spec: BenchSpec) -> list[dict]:
    """Detectors see ``H + E``; data is generated with ``H``."""
    return run_ser_sweep(spec, extra_note=f"csi_error_var={spec.channel_error_var:g}")


def format_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        out = dict(row)
        out["ser"] = f"{row['ser']:.6e}"
        out["snr_db"] = f"{row['snr_db']:g}"
        writer.writerow(out)
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        for k in ("M", "N", "Q", "trials", "errors", "seed"):
            row[k] = int(row[k])
        row["snr_db"] = float(row["snr_db"])
        row["ser"] = float(row["ser"])
        rows.append(row)
    return rows


def ser_crossing(snrs, sers, target=1e-2):
    """SNR where the SER curve crosses ``target`` (log-linear interpolation), or None."""
    pts = [(s, e) for s, e in zip(snrs, sers)]
    for (s0, e0), (s1, e1) in zip(pts, pts[1:]):
        if e0 >= target >= e1 and e0 > 0 and e1 > 0 and e0 != e1:
            f = (math.log10(e0) - math.log10(target)) / (math.log10(e0) - math.log10(e1))
            return s0 + f * (s1 - s0)
    return None


# ----------------------------------------------------------- operation counts

@dataclass
class OpCountReport:
    """Real multiplications per detected vector.

    ``amp`` and ``gnn`` map a term name to ``(count, growth)`` where
    ``growth`` names the dominant dependence on the system size.
    Divisions count as multiplications; exp/tanh/sigmoid are not counted.
    """

    M: int
    N: int
    Q: int
    T: int
    L: int
    amp: dict = field(default_factory=dict)
    gnn: dict = field(default_factory=dict)
    lmmse: dict = field(default_factory=dict)

    @property
    def amp_total(self) -> int:
        return sum(c for c, _ in self.amp.values())

    @property
    def gnn_total(self) -> int:
        return sum(c for c, _ in self.gnn.values())

    @property
    def ampgnn_total(self) -> int:
        return self.amp_total + self.gnn_total

    @property
    def lmmse_gnn_total(self) -> int:
        return sum(c for c, _ in self.lmmse.values()) + self.gnn_total

    def rows(self):
        for part, terms in (("amp", self.amp), ("gnn", self.gnn), ("lmmse", self.lmmse)):
            for name, (count, growth) in terms.items():
                yield {"part": part, "term": name, "count": count, "growth": growth}


def count_ops(M: int, N: int, Q: int, T: int = 10, L: int = 2, sizes=(8, 16, 8)) -> OpCountReport:
    """Closed-form multiplication counts for AMP, the MPNN, and an LMMSE-based layer.

    The AMP part counts the complex algorithm (one complex multiply = 4
    real).  The MPNN part counts the network as implemented: ``2N`` real
    nodes, ``2N(2N-1)`` directed edges, the first edge layer split into
    per-node projections plus the edge-attribute term.
    """
    n_u, n_h1, n_h2 = sizes
    K = int(round(math.sqrt(Q)))
    n = 2 * N
    E = n * (n - 1)
    rep = OpCountReport(M, N, Q, T, L)
    # per detected vector; layer-invariant work counted once
    rep.amp = {
        "|a|^2 precompute": (2 * M * N, "M*N"),
        "variance V": (T * M * N, "M*N"),
        "mean Z + Onsager": (T * (4 * M * N + 4 * M), "M*N"),
        "noise Sigma": (T * (M * N + M + N), "M*N"),
        "observation r": (T * (4 * M * N + 2 * M + 2 * N), "M*N"),
        "denoiser": (T * 2 * N * 6 * K, "N"),
    }
    rep.gnn = {
        "Gram a_n.a_j (edge attrs)": (n * (n + 1) // 2 * 2 * M, "M*N^2"),
        "y.a_n (node feats)": (n * 2 * M, "M*N"),
        "encoder": (n * 3 * n_u, "N"),
        "edge MLP node projections": (T * L * n * 2 * n_h1 * n_u, "N"),
        "edge MLP per-edge": (T * L * E * (n_h1 + n_h1 * n_h2 + n_h2 * n_u), "N^2"),
        "GRU": (T * L * n * (3 * n_h1 * (n_u + 2) + 3 * n_h1 * n_h1 + 3 * n_h1), "N"),
        "hidden projection W2": (T * L * n * n_u * n_h1, "N"),
        "readout MLP": (T * n * (n_u * n_h1 + n_h1 * n_h2 + n_h2 * K), "N"),
        "softmax + moments": (T * n * 4 * K, "N"),
    }
    # LMMSE linear module as in EP-style detectors: N x N inverse every layer
    rep.lmmse = {
        "H^H H, H^H y": (4 * N * N * M + 4 * M * N, "M*N^2"),
        "N x N inverse": (T * 4 * N**3, "N^3"),
        "LMMSE estimate": (T * (4 * N * N + 4 * N), "N^2"),
        "denoiser": (T * 2 * N * 6 * K, "N"),
    }
    return rep


def growth_exponents(M: int, N: int, Q: int, T: int = 10, L: int = 2, sizes=(8, 16, 8)):
    """``log2`` of each term's ratio when ``N`` doubles at fixed ``M``."""
    a = count_ops(M, N, Q, T, L, sizes)
    b = count_ops(M, 2 * N, Q, T, L, sizes)
    out = {}
    for part in ("amp", "gnn", "lmmse"):
        ta, tb = getattr(a, part), getattr(b, part)
        for name in ta:
            out[f"{part}:{name}"] = math.log2(tb[name][0] / ta[name][0])
    return out
