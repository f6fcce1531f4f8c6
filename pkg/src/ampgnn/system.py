"""Constellations, Rayleigh channels, SNR calibration and the real-valued embedding.

Everything downstream runs on the real embedding of the complex model
``y = H x + n``: an ``M x N`` complex system becomes a ``2M x 2N`` real one
and each complex QAM symbol becomes two independent PAM symbols.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SUPPORTED_ORDERS = (4, 16, 64)
MOD_NAMES = {"qpsk": 4, "4qam": 4, "16qam": 16, "64qam": 64}


@dataclass(frozen=True)
class Constellation:
    order: int
    pam_points: np.ndarray
    prior: np.ndarray

    @property
    def size(self) -> int:
        """Number of PAM amplitudes per real dimension (``sqrt(Q)``)."""
        return self.pam_points.size

    @property
    def complex_points(self) -> np.ndarray:
        re, im = np.meshgrid(self.pam_points, self.pam_points, indexing="ij")
        return (re + 1j * im).ravel()

    @property
    def log_prior(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.prior)

    @property
    def dim_variance(self) -> float:
        """Prior variance of one real dimension."""
        mean = float(self.prior @ self.pam_points)
        return float(self.prior @ self.pam_points**2) - mean**2

    def nearest(self, values: np.ndarray) -> np.ndarray:
        """Index of the closest PAM amplitude, elementwise."""
        values = np.asarray(values, dtype=float)
        return np.abs(values[..., None] - self.pam_points).argmin(axis=-1)


def make_constellation(order: int, prior=None) -> Constellation:
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported QAM order {order}; expected one of {SUPPORTED_ORDERS}")
    k = int(round(np.sqrt(order)))
    levels = np.arange(-(k - 1), k, 2, dtype=float)
    # E|s|^2 = 2 E[level^2] for the square grid
    scale = np.sqrt(2.0 * np.mean(levels**2))
    pam = levels / scale
    if prior is None:
        prior = np.full(k, 1.0 / k)
    else:
        prior = np.asarray(prior, dtype=float)
        if prior.shape != (k,) or np.any(prior < 0):
            raise ValueError("prior must be a nonnegative vector with one entry per PAM point")
        prior = prior / prior.sum()
    pam.setflags(write=False)
    prior.setflags(write=False)
    return Constellation(order=order, pam_points=pam, prior=prior)


def parse_modulation(name: str) -> int:
    try:
        return MOD_NAMES[name.lower().replace("-", "")]
    except KeyError:
        raise ValueError(f"unknown modulation {name!r}; choose from qpsk, 16qam, 64qam") from None


@dataclass
class LinearSystem:
    """One received vector with its channel, in complex and real-embedded form."""

    H: np.ndarray
    y: np.ndarray
    sigma2: float
    H_real: np.ndarray = field(init=False, repr=False)
    y_real: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=complex))
        self.y = np.asarray(self.y, dtype=complex).reshape(-1)
        if self.H.shape[0] != self.y.size:
            raise ValueError(f"H has {self.H.shape[0]} rows but y has {self.y.size} entries")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        self.sigma2 = float(self.sigma2)
        self.H_real = embed_matrix(self.H)
        self.y_real = embed_vector(self.y)

    @property
    def M(self) -> int:
        return self.H.shape[0]

    @property
    def N(self) -> int:
        return self.H.shape[1]

    @property
    def sigma2_real(self) -> float:
        return self.sigma2 / 2.0


@dataclass
class Sample:
    system: LinearSystem
    x_true: np.ndarray
    labels: np.ndarray

    @property
    def x_true_real(self) -> np.ndarray:
        return embed_vector(self.x_true)


def embed_matrix(H: np.ndarray) -> np.ndarray:
    """``[[Re H, -Im H], [Im H, Re H]]``; works on stacked matrices too."""
    H = np.asarray(H)
    re, im = H.real, H.imag
    top = np.concatenate([re, -im], axis=-1)
    bottom = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def embed_vector(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return np.concatenate([x.real, x.imag], axis=-1)


def unembed_vector(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    half = v.shape[-1] // 2
    return v[..., :half] + 1j * v[..., half:]


def embed_real(system: LinearSystem) -> tuple[np.ndarray, np.ndarray, float]:
    return system.H_real, system.y_real, system.sigma2_real


def sample_channel(M: int, N: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """I.i.d. CN(0, 1/M) entries, so every column has unit expected squared norm."""
    if M < 1 or N < 1:
        raise ValueError("M and N must be positive")
    shape = (M, N) if size is None else (size, M, N)
    scale = np.sqrt(0.5 / M)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def sigma2_for_snr(snr_db: float, M: int, N: int) -> float:
    """Noise variance per complex receive dimension for ``E|Hx|^2 / E|n|^2 = SNR``."""
    return N / (M * 10.0 ** (snr_db / 10.0))


@dataclass
class Batch:
    """Stacked real-embedded samples; the layout the detectors consume.

    ``H`` is ``(B, 2M, 2N)``, ``y`` is ``(B, 2M)``, ``sigma2`` is the real
    per-dimension noise variance ``(B,)``, ``x`` is ``(B, 2N)`` and
    ``labels`` index ``constellation.pam_points``.
    """

    H: np.ndarray
    y: np.ndarray
    sigma2: np.ndarray
    x: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.H.shape[0]

    @property
    def n_users(self) -> int:
        return self.H.shape[2] // 2

    def system(self, i: int) -> LinearSystem:
        M2, N2 = self.H.shape[1:]
        M, N = M2 // 2, N2 // 2
        Hc = self.H[i, :M, :N] + 1j * self.H[i, M:, :N]
        return LinearSystem(Hc, unembed_vector(self.y[i]), 2.0 * self.sigma2[i])

    def sample(self, i: int) -> Sample:
        return Sample(self.system(i), unembed_vector(self.x[i]), self.labels[i].copy())


def draw_batch(count: int, M: int, N: int, constellation: Constellation, snr_db: float,
               rng: np.random.Generator, channel_error_var: float = 0.0) -> tuple[Batch, np.ndarray | None]:
    """Draw ``count`` independent transmissions.

    Returns the batch built on the true channel and, when
    ``channel_error_var > 0``, the mismatched real channels the receiver
    sees.  The error power is relative to the channel entry variance
    ``1/M``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    H = sample_channel(M, N, rng, size=count)
    labels = rng.choice(constellation.size, size=(count, 2 * N), p=constellation.prior)
    x_real = constellation.pam_points[labels]
    x = unembed_vector(x_real)
    sigma2 = sigma2_for_snr(snr_db, M, N)
    noise = np.sqrt(sigma2 / 2.0) * (rng.standard_normal((count, M)) + 1j * rng.standard_normal((count, M)))
    y = np.einsum("bmn,bn->bm", H, x) + noise
    H_seen = None
    if channel_error_var > 0:
        E = sample_channel(M, N, rng, size=count) * np.sqrt(channel_error_var)
        H_seen = embed_matrix(H + E)
    batch = Batch(H=embed_matrix(H), y=embed_vector(y), sigma2=np.full(count, sigma2 / 2.0),
                  x=x_real, labels=labels)
    return batch, H_seen


def generate_batch(count: int, M: int, N: int, Q: int, snr_db: float,
                   rng: np.random.Generator) -> list[Sample]:
    constellation = make_constellation(Q)
    batch, _ = draw_batch(count, M, N, constellation, snr_db, rng)
    return [batch.sample(i) for i in range(count)]
