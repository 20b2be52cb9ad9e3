"""Trainable transceiver components and mutual-information estimators.

Three parameter groups:

* a 64-point constellation (raw complex points, normalized to unit mean power
  inside the computation graph so the constraint holds exactly at every step);
* a cubic pre-emphasis filter C[m, n] over a +-10 symbol window, applied
  identically to both polarizations with circular frame indexing;
* a posterior decoder MLP (2 -> 32 -> 32 -> 64, ReLU hidden, softmax output)
  shared between polarizations, with a stored input RMS for inference-time
  standardization.

MI is reported in bits per symbol per polarization as 6 - xent / ln 2, plus a
per-class Gaussian KDE estimator used as a decoder-independent reference.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import warnings

import numpy as np

from . import autograd as ag
from .dsp import LinkConfig, PulseConfig
from .errors import ConfigurationError

M_POINTS = 64
BITS_PER_SYMBOL = 6  # log2(64)
PREEMPH_WINDOW = 10  # |m| <= 10, |n| <= 10
POSTERIOR_FLOOR = 1e-30


def qam64_grid() -> np.ndarray:
    """Standard 64-QAM, unit mean power, Gray-free natural ordering."""
    levels = np.arange(-7, 8, 2, dtype=float)
    re, im = np.meshgrid(levels, levels)
    pts = (re + 1j * im).ravel()
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


# ---------------------------------------------------------------------------
# encoder


@dataclass(frozen=True)
class Constellation:
    """Trainable constellation; `points` are raw, `normalized` has unit mean power."""

    points: np.ndarray  # (64,) complex

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.complex128)
        if p.shape != (M_POINTS,):
            raise ConfigurationError(f"constellation must have {M_POINTS} points")
        object.__setattr__(self, "points", p)

    @classmethod
    def qam64(cls) -> "Constellation":
        return cls(qam64_grid())

    @property
    def normalized(self) -> np.ndarray:
        return ag.value(normalize_constellation(self.points))


def normalize_constellation(points):
    """points / rms(points); exact unit mean power, differentiable."""
    rms = ag.sqrt(ag.mean(ag.abs2(points)))
    return ag.div(points, rms)


def encode_arr(messages: np.ndarray, points):
    """Map (..., ) message indices to normalized constellation points (tape-aware)."""
    messages = np.asarray(messages)
    if messages.min(initial=0) < 0 or messages.max(initial=0) >= M_POINTS:
        raise ConfigurationError("message indices must lie in [0, 64)")
    return ag.gather(normalize_constellation(points), messages)


def encode(messages: np.ndarray, constellation: Constellation) -> np.ndarray:
    """(2, N) indices -> (2, N) normalized symbols."""
    return np.asarray(ag.value(encode_arr(messages, constellation.points)))


# ---------------------------------------------------------------------------
# pre-emphasis


@dataclass(frozen=True)
class PreEmphasis:
    """Cubic correction coefficients C[m, n], indices -10..10 on both axes."""

    coeffs: np.ndarray  # (21, 21) complex

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        w = 2 * PREEMPH_WINDOW + 1
        if c.shape != (w, w):
            raise ConfigurationError(f"pre-emphasis coefficients must be ({w}, {w})")
        if not np.all(np.isfinite(c)):
            raise ConfigurationError("pre-emphasis coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zero(cls) -> "PreEmphasis":
        w = 2 * PREEMPH_WINDOW + 1
        return cls(np.zeros((w, w), dtype=np.complex128))

    def coeff(self, m: int, n: int) -> complex:
        return self.coeffs[m + PREEMPH_WINDOW, n + PREEMPH_WINDOW]


def pre_emphasize_arr(xh, xv, coeffs):
    """Add the cubic correction to both polarizations (tape-aware).

    delta_h[t] = sum_{m,n} C[m,n] x_h[t+m] (x_h[t+n] conj(x_h[t+m+n])
                                            + x_v[t+n] conj(x_v[t+m+n]))
    and symmetrically for V; the bracket is the same for both outputs.
    Frame indexing is circular.
    """
    w = PREEMPH_WINDOW
    shifts = {}

    def shifted(x, s):
        key = (id(x), s)
        if key not in shifts:
            shifts[key] = ag.roll(x, -s, axis=-1)  # [t] -> x[t+s]
        return shifts[key]

    # shared bracket terms A[n, k] = xh_n conj(xh_k) + xv_n conj(xv_k)
    flat = ag.reshape(coeffs, (-1,))
    width = 2 * w + 1
    s_terms = []
    for m in range(-w, w + 1):
        row = []
        for n in range(-w, w + 1):
            a = ag.add(
                ag.mul(shifted(xh, n), ag.conj(shifted(xh, m + n))),
                ag.mul(shifted(xv, n), ag.conj(shifted(xv, m + n))),
            )
            c = ag.gather(flat, np.array((m + w) * width + (n + w)))
            row.append(ag.mul(c, a))
        s_terms.append((m, _tree_sum(row)))

    dh = _tree_sum([ag.mul(shifted(xh, m), s) for m, s in s_terms])
    dv = _tree_sum([ag.mul(shifted(xv, m), s) for m, s in s_terms])
    return ag.add(xh, dh), ag.add(xv, dv)


def _tree_sum(items):
    while len(items) > 1:
        items = [ag.add(items[i], items[i + 1]) if i + 1 < len(items) else items[i]
                 for i in range(0, len(items), 2)]
    return items[0]


def pre_emphasize(syms: np.ndarray, pe: PreEmphasis) -> np.ndarray:
    """(2, N) symbols -> (2, N) pre-emphasized symbols."""
    syms = np.asarray(syms)
    if syms.shape[-1] <= 2 * PREEMPH_WINDOW + 1:
        raise ConfigurationError("frame shorter than the pre-emphasis window")
    h, v = pre_emphasize_arr(syms[0], syms[1], pe.coeffs)
    return np.stack([ag.value(h), ag.value(v)])


def triplet_features(syms: np.ndarray) -> np.ndarray:
    """Cubic triplet features for both polarizations: (2N, 441) complex.

    Column order matches C.ravel(): index (m+10)*21 + (n+10).
    """
    w = PREEMPH_WINDOW
    xh, xv = syms[0], syms[1]
    n_sym = xh.shape[-1]
    cols = []
    for m in range(-w, w + 1):
        hm = np.roll(xh, -m)
        vm = np.roll(xv, -m)
        for n in range(-w, w + 1):
            a = (np.roll(xh, -n) * np.conj(np.roll(xh, -(m + n)))
                 + np.roll(xv, -n) * np.conj(np.roll(xv, -(m + n))))
            cols.append(np.concatenate([hm * a, vm * a]))
    return np.stack(cols, axis=1).reshape(-1, (2 * w + 1) ** 2)


def init_preemph(link: LinkConfig, pulse: PulseConfig, *, launch_power_dbm: float = 0.0,
                 n_symbols: int = 2 ** 13, seed: int = 1234) -> PreEmphasis:
    """Fit pre-emphasis coefficients that cancel the model's first-order distortion.

    Regresses the noiseless RP received-symbol perturbation (relative to the
    least-squares-scaled transmit symbols) onto the cubic triplet features and
    negates the solution.
    """
    # local import: avoids a module cycle with the channel code
    from . import pipeline as _pipeline
    from .rp import RpModelConfig

    if link.gamma_w_km == 0.0:
        return PreEmphasis.zero()
    rng = np.random.default_rng(seed)
    msgs = rng.integers(0, M_POINTS, size=(2, n_symbols))
    tx = encode(msgs, Constellation.qam64())
    rp_cfg = RpModelConfig.default_for_link(link, *_default_staging(link), with_noise=False)
    rx = _pipeline.transmit_symbols(tx, link, pulse, launch_power_dbm, rp_cfg=rp_cfg)
    feats = triplet_features(tx)
    target = np.empty(2 * n_symbols, dtype=np.complex128)
    for p in range(2):
        a = np.vdot(tx[p], rx[p]) / np.vdot(tx[p], tx[p])
        target[p * n_symbols:(p + 1) * n_symbols] = rx[p] / a - tx[p]
    try:
        sol, *_ = np.linalg.lstsq(feats, target, rcond=None)
    except np.linalg.LinAlgError:
        warnings.warn("singular pre-emphasis regression; falling back to zero coefficients")
        return PreEmphasis.zero()
    w = 2 * PREEMPH_WINDOW + 1
    return PreEmphasis(-sol.reshape(w, w))


def _default_staging(link: LinkConfig) -> tuple[int, int]:
    # one stage per 10 spans when possible, else a single stage
    if link.n_spans % 10 == 0:
        return link.n_spans // 10, 100
    return 1, 10 * link.n_spans


# ---------------------------------------------------------------------------
# decoder


@dataclass(frozen=True)
class DecoderNet:
    """2 -> 32 -> 32 -> 64 MLP over standardized (Re, Im) features."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    input_rms: float = 1.0

    @classmethod
    def init(cls, seed: int = 0, hidden: int = 32) -> "DecoderNet":
        rng = np.random.default_rng(seed)

        def glorot(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))

        return cls(
            w1=glorot(2, hidden), b1=np.zeros(hidden),
            w2=glorot(hidden, hidden), b2=np.zeros(hidden),
            w3=glorot(hidden, M_POINTS), b3=np.zeros(M_POINTS),
        )

    def weight_arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
                "w3": self.w3, "b3": self.b3}


def decode_arr(y, weights: dict, rms):
    """Posterior matrix for received symbols y (1-D complex), tape-aware."""
    z = ag.div(y, rms)
    feats = _features(z)
    h1 = ag.relu(ag.add(ag.matmul(feats, weights["w1"]), weights["b1"]))
    h2 = ag.relu(ag.add(ag.matmul(h1, weights["w2"]), weights["b2"]))
    logits = ag.add(ag.matmul(h2, weights["w3"]), weights["b3"])
    return ag.softmax(logits, axis=-1)


def _features(z):
    """(N,) complex -> (N, 2) real [Re, Im]."""
    re = ag.reshape(ag.real(z), (-1, 1))
    im = ag.reshape(ag.imag(z), (-1, 1))
    return ag.add(ag.mul(re, np.array([1.0, 0.0])), ag.mul(im, np.array([0.0, 1.0])))


def decode(y: np.ndarray, net: DecoderNet) -> np.ndarray:
    """(N,) received symbols -> (N, 64) posteriors."""
    return np.asarray(ag.value(decode_arr(np.asarray(y), net.weight_arrays(), net.input_rms)))


# ---------------------------------------------------------------------------
# objectives


def xent_loss_arr(posteriors, labels):
    labels = np.asarray(labels)
    picked = ag.take_label(posteriors, labels)
    return ag.neg(ag.mean(ag.log(ag.maximum(picked, POSTERIOR_FLOOR))))


def xent_loss(posteriors: np.ndarray, labels: np.ndarray) -> float:
    """Mean categorical cross entropy, natural log."""
    posteriors = np.asarray(posteriors)
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= M_POINTS:
        raise ConfigurationError("labels must lie in [0, 64)")
    picked = posteriors[np.arange(len(labels)), labels]
    if np.any(picked < POSTERIOR_FLOOR):
        warnings.warn("posterior underflow clamped in cross entropy")
    return float(-np.mean(np.log(np.maximum(picked, POSTERIOR_FLOOR))))


def mi_estimate(posteriors: np.ndarray, labels: np.ndarray) -> float:
    """Decoder-based MI lower bound, bits/sym/pol: 6 - xent / ln 2."""
    return BITS_PER_SYMBOL - xent_loss(posteriors, labels) / np.log(2.0)


# ---------------------------------------------------------------------------
# KDE reference estimator


def kde_mi(rx: np.ndarray, labels: np.ndarray, bandwidth: float | None = None,
           rng: np.random.Generator | None = None) -> float:
    """Per-class Gaussian KDE estimate of the MI, bits/sym/pol.

    Kernels are fitted on all samples and the MI is evaluated leave-one-out:
    each point's own kernel is excluded from its conditional density.  This
    uses the full sample for both fitting and evaluation, which roughly halves
    the smoothing bias of a train/test split at the same data size.  Bandwidth
    defaults to Silverman's rule per class (2-D); pass `bandwidth` to override
    with a fixed value.
    """
    rx = np.asarray(rx).ravel()
    labels = np.asarray(labels).ravel()
    if rx.shape != labels.shape:
        raise ConfigurationError("rx/labels length mismatch")
    if rx.size < 2 ** 14:
        raise ConfigurationError("kde_mi requires at least 2^14 samples")
    if rng is not None:
        perm = rng.permutation(rx.size)
        rx, labels = rx[perm], labels[perm]

    classes = []
    for k in range(M_POINTS):
        pts = rx[labels == k]
        if pts.size < 2:
            raise ConfigurationError(f"not enough fit samples for class {k}")
        if bandwidth is None:
            mu = pts.mean()
            sigma = np.sqrt(0.5 * np.mean(np.abs(pts - mu) ** 2))  # per real dim
            h = sigma * pts.size ** (-1.0 / 6.0)  # Silverman, d = 2
        else:
            h = bandwidth
        classes.append((pts, max(h, 1e-12)))

    log_cond = np.empty(rx.size)
    log_mix = np.empty(rx.size)
    chunk = 2048
    for lo in range(0, rx.size, chunk):
        y = rx[lo:lo + chunk]
        yl = labels[lo:lo + chunk]
        dens = np.empty((y.size, M_POINTS))
        for k, (pts, h) in enumerate(classes):
            d2 = np.abs(y[:, None] - pts[None, :]) ** 2
            ssum = np.exp(-d2 / (2 * h * h)).sum(axis=1)
            own = yl == k  # drop the unit self-kernel of own-class points
            dens[:, k] = (ssum - own) / ((pts.size - own) * 2 * np.pi * h * h)
        dens = np.maximum(dens, 1e-300)
        log_cond[lo:lo + chunk] = np.log(dens[np.arange(y.size), yl])
        log_mix[lo:lo + chunk] = np.log(dens.mean(axis=1))
    return float(np.mean(log_cond - log_mix) / np.log(2.0))
