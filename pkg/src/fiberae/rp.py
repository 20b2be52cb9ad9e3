"""First-order regular-perturbation channel model.

One stage approximates propagation over ``length_km`` as a linear branch plus
``n_branches - 1`` Kerr branches, one per length-``d`` segment
(``d = length_km / n_branches``)::

    out = e^{i theta} ( D_z[u] + sum_k D_{z - z_k}[ i g w_k (P_k - s_k) u_k ] )

where ``u_k = D_{z_k}[u] + xi_k`` is the field sampled at the loss-weighted
centroid ``z_k`` of segment ``k``, ``P_k = ||u_k||^2`` the instantaneous dual-pol
power, ``g = (8/9) gamma`` the Manakov nonlinear coefficient, and
``w_k = f(k d) L_eff(d)`` the integrated loss/gain weight of the segment
(``f`` is the per-span loss/gain profile).  Two refinements keep the first-order
expansion accurate over many spans:

* the spatial mean of the nonlinear phase is factored out of the perturbative
  sum into the common rotation ``e^{i theta}``, ``theta = sum_k g w_k s_k``,
  with the adaptive per-branch reference ``s_k = E[P_k^2] / E[P_k]`` chosen so
  each branch is orthogonal to the linear solution;
* the output propagator of each branch is damped by the loss-weighted position
  variance of its segment, accounting for the spread of generation points
  within the segment.

Each branch noise term ``xi_k`` is circular Gaussian with PSD proportional to
the number of amplifiers passed before ``z_k``; the linear branch carries the
full stage noise at its output.  A link is modeled by cascading stages
(default: 3 stages of 10 spans with 100 branches each).

Branches are evaluated in fixed-size chunks; chunks may run on a thread pool
(inference) or sequentially on the autograd tape (training).  The reduction
order is fixed, so results are bit-identical for any worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import parallel
from .dsp import DualPolWaveform, LinkConfig, dispersion_phase
from .errors import ConfigurationError
from .ssfm import MANAKOV_FACTOR, ase_psd

_CHUNK = 16  # branches per chunk; fixed so reduction order never depends on workers
_FLOOR_TOL = 1e-9


@dataclass(frozen=True)
class RpStageConfig:
    length_km: float
    n_branches: int

    def __post_init__(self):
        if self.n_branches < 1:
            raise ConfigurationError("n_branches must be >= 1")
        if self.length_km <= 0:
            raise ConfigurationError("stage length must be positive")

    @property
    def delta_km(self) -> float:
        return self.length_km / self.n_branches

    def validate_against(self, link: LinkConfig) -> None:
        spans = self.length_km / link.span_length_km
        if abs(spans - round(spans)) > _FLOOR_TOL:
            raise ConfigurationError(
                f"stage length {self.length_km} km is not a whole number of spans")
        d = self.delta_km
        r = link.span_length_km / d
        if abs(r - round(r)) > _FLOOR_TOL and abs(1 / r - round(1 / r)) > _FLOOR_TOL:
            raise ConfigurationError(
                f"branch spacing {d} km does not align with span length "
                f"{link.span_length_km} km")

    def spans(self, link: LinkConfig) -> int:
        return round(self.length_km / link.span_length_km)


@dataclass(frozen=True)
class RpModelConfig:
    stages: tuple[RpStageConfig, ...]
    with_noise: bool = True

    def __post_init__(self):
        if not self.stages:
            raise ConfigurationError("at least one RP stage required")
        object.__setattr__(self, "stages", tuple(self.stages))

    @classmethod
    def default_for_link(cls, link: LinkConfig, n_stages: int = 3,
                         branches_per_stage: int = 100, with_noise: bool = True):
        if link.n_spans % n_stages:
            raise ConfigurationError(
                f"{link.n_spans} spans do not divide into {n_stages} stages")
        length = link.span_length_km * (link.n_spans // n_stages)
        return cls(tuple(RpStageConfig(length, branches_per_stage) for _ in range(n_stages)),
                   with_noise=with_noise)

    def total_length_km(self) -> float:
        return sum(s.length_km for s in self.stages)

    def validate_against(self, link: LinkConfig) -> None:
        if abs(self.total_length_km() - link.total_length_km) > _FLOOR_TOL:
            raise ConfigurationError(
                f"stage lengths sum to {self.total_length_km()} km, link is "
                f"{link.total_length_km} km")
        for s in self.stages:
            s.validate_against(link)


def loss_profile(z_km: float, link: LinkConfig) -> float:
    """Per-span loss/gain power profile f(z) = exp(-alpha z + alpha L_sp floor(z/L_sp))."""
    k = np.floor(z_km / link.span_length_km + _FLOOR_TOL)
    return float(np.exp(-link.alpha_lin * (z_km - k * link.span_length_km)))


def effective_length(delta_km: float, alpha_lin: float) -> float:
    if alpha_lin < 1e-12:
        return delta_km
    return (1.0 - np.exp(-alpha_lin * delta_km)) / alpha_lin


def segment_moments(delta_km: float, alpha_lin: float) -> tuple[float, float]:
    """Mean and variance of position within [0, delta] weighted by exp(-alpha s)."""
    if alpha_lin < 1e-12:
        return delta_km / 2.0, delta_km ** 2 / 12.0
    a = alpha_lin
    d = delta_km
    leff = effective_length(d, a)
    ead = np.exp(-a * d)
    mu = 1.0 / a - d * ead / (1.0 - ead)
    m2 = (2.0 / a ** 3 - ead * (d * d / a + 2.0 * d / a ** 2 + 2.0 / a ** 3)) / leff
    return float(mu), float(m2 - mu * mu)


def _branch_coeff(m: int, delta_km: float, link: LinkConfig) -> complex:
    return (1j * MANAKOV_FACTOR * link.gamma_w_km
            * effective_length(delta_km, link.alpha_lin)
            * loss_profile(m * delta_km, link))


def kerr_kernel(w: DualPolWaveform, link: LinkConfig, delta_km: float, m: int) -> DualPolWaveform:
    """Pointwise Kerr branch kernel K_{delta,m}[u] = i (8/9) gamma L_eff f(m d) ||u||^2 u."""
    if m < 0:
        raise ConfigurationError("branch index must be >= 0")
    u = w.samples
    out = _branch_coeff(m, delta_km, link) * (np.abs(u[0]) ** 2 + np.abs(u[1]) ** 2) * u
    return DualPolWaveform(out, w.sample_rate)


def _amps_passed(z_km: float, link: LinkConfig) -> int:
    return int(np.floor(z_km / link.span_length_km + _FLOOR_TOL))


def _draw_noise(rng: np.random.Generator, var: float, shape) -> np.ndarray:
    flat = rng.normal(scale=np.sqrt(var / 2.0), size=shape + (2,))
    return flat.view(np.complex128)[..., 0]


def rp_stage_arr(u, stage: RpStageConfig, link: LinkConfig, sample_rate: float,
                 sigma2_ase: float, rng: np.random.Generator | None = None):
    """One RP stage on a (2, N) array (tape-aware). Noise off when rng is None."""
    stage.validate_against(link)
    n = ag.value(u).shape[-1]
    z = stage.length_km
    d = stage.delta_km
    nb = stage.n_branches
    beta2 = link.beta2_ps2_km
    g_nl = MANAKOV_FACTOR * link.gamma_w_km

    mu, var = segment_moments(d, link.alpha_lin)
    omega = 2.0 * np.pi * np.fft.fftfreq(n, d=1.0 / sample_rate)
    damp = np.exp(-var * (0.5 * beta2 * 1e-24 * omega ** 2) ** 2)

    gens = rng.spawn(nb + 1) if rng is not None else None
    noise_var = sigma2_ase * sample_rate

    x_spec = ag.fft(u)
    acc = ag.mul(x_spec, dispersion_phase(n, sample_rate, beta2, z))
    theta = 0.0

    chunks = []
    for start in range(0, nb - 1, _CHUNK):
        ks = np.arange(start, min(start + _CHUNK, nb - 1))
        zc = ks * d + mu
        h_in = np.stack([dispersion_phase(n, sample_rate, beta2, zk) for zk in zc])[:, None, :]
        h_out = np.stack([damp * dispersion_phase(n, sample_rate, beta2, z - zk)
                          for zk in zc])[:, None, :]
        # segment weight g w_k = (8/9) gamma L_eff(d) f(k d), as in kerr_kernel
        wgt = np.array([g_nl * effective_length(d, link.alpha_lin)
                        * loss_profile(k * d, link) for k in ks]).reshape(-1, 1, 1)
        xi = None
        if gens is not None:
            xi = np.zeros((len(ks), 2, n), dtype=np.complex128)
            for i, (k, zk) in enumerate(zip(ks, zc)):
                amps = _amps_passed(zk, link)
                if amps > 0:
                    xi[i] = _draw_noise(gens[k], amps * noise_var, (2, n))
        chunks.append((h_in, h_out, wgt, xi))

    def branch_term(args):
        h_in, h_out, wgt, xi = args
        um = ag.ifft(ag.mul(x_spec, h_in))
        if xi is not None:
            um = ag.add(um, xi)
        p = ag.sum_(ag.abs2(um), axis=-2, keepdims=True)
        # adaptive reference s_k = E[P^2]/E[P]; subtracting it makes the branch
        # orthogonal to the linear solution, its phase joins the common rotation
        s = ag.div(ag.mean(ag.mul(p, p), axis=-1, keepdims=True),
                   ag.mean(p, axis=-1, keepdims=True))
        km = ag.mul(ag.sub(ag.kerr(um, pol_axis=-2), ag.mul(s, um)), 1j * wgt)
        term = ag.sum_(ag.mul(ag.fft(km), h_out), axis=0)
        dtheta = ag.sum_(ag.mul(s, wgt))
        return term, dtheta

    if ag._active_tape() is not None:
        results = [branch_term(c) for c in chunks]
    else:
        results = parallel.map_ordered(branch_term, chunks)
    for term, dtheta in results:
        acc = ag.add(acc, term)
        theta = ag.add(theta, dtheta)

    out = ag.ifft(acc)
    if chunks:
        out = ag.mul(ag.expi(theta), out)
    if gens is not None:
        spans = stage.spans(link)
        if spans > 0 and noise_var > 0:
            out = ag.add(out, _draw_noise(gens[nb], spans * noise_var, (2, n)))
    return out


def rp_propagate_arr(u, cfg: RpModelConfig, link: LinkConfig, sample_rate: float,
                     rng: np.random.Generator | None = None):
    cfg.validate_against(link)
    if cfg.with_noise and rng is None:
        raise ConfigurationError("with_noise requires a seeded rng")
    sigma2 = ase_psd(link)
    stage_rngs = rng.spawn(len(cfg.stages)) if (cfg.with_noise and rng is not None) else [None] * len(cfg.stages)
    for stage, srng in zip(cfg.stages, stage_rngs):
        u = rp_stage_arr(u, stage, link, sample_rate, sigma2, srng)
    return u


def rp_stage(w: DualPolWaveform, stage: RpStageConfig, link: LinkConfig,
             sigma2_ase: float, rng: np.random.Generator | None = None) -> DualPolWaveform:
    out = ag.value(rp_stage_arr(w.samples, stage, link, w.sample_rate, sigma2_ase, rng))
    return DualPolWaveform(np.asarray(out), w.sample_rate)


def rp_propagate(w: DualPolWaveform, cfg: RpModelConfig, link: LinkConfig,
                 rng: np.random.Generator | None = None) -> DualPolWaveform:
    out = ag.value(rp_propagate_arr(w.samples, cfg, link, w.sample_rate, rng))
    return DualPolWaveform(np.asarray(out), w.sample_rate)
