"""End-to-end training, decoder fine-tuning, and evaluation.

Training runs the differentiable chain
encode -> pre-emphasize -> modulate -> set launch power -> RP channel ->
CDC -> demodulate -> decode -> cross entropy
on the autograd tape, with channel noise redrawn every batch and injected as
constants (gradients flow through the signal path only).  Evaluation replaces
the RP channel with the split-step reference and reports MI over independent
sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import dsp, model, ssfm
from .dsp import DualPolWaveform, LinkConfig, PulseConfig, SymbolFrame
from .errors import ConfigurationError, NumericalDivergenceError
from .model import Constellation, DecoderNet, PreEmphasis
from .rp import RpModelConfig, rp_propagate_arr
from .ssfm import SsfmOptions

LN2 = np.log(2.0)


@dataclass
class ModelParams:
    """All trainable parameter groups."""

    constellation: np.ndarray  # (64,) complex, raw
    preemph: np.ndarray  # (21, 21) complex
    decoder: dict[str, np.ndarray]  # w1,b1,w2,b2,w3,b3
    decoder_rms: float = 1.0

    @classmethod
    def init(cls, seed: int = 0, preemph: PreEmphasis | None = None) -> "ModelParams":
        pe = preemph if preemph is not None else PreEmphasis.zero()
        return cls(
            constellation=model.qam64_grid().copy(),
            preemph=pe.coeffs.copy(),
            decoder={k: v.copy() for k, v in DecoderNet.init(seed).weight_arrays().items()},
        )

    def copy(self) -> "ModelParams":
        return ModelParams(self.constellation.copy(), self.preemph.copy(),
                           {k: v.copy() for k, v in self.decoder.items()},
                           self.decoder_rms)

    def decoder_net(self) -> DecoderNet:
        return DecoderNet(input_rms=self.decoder_rms, **self.decoder)

    def constellation_obj(self) -> Constellation:
        return Constellation(self.constellation)

    def preemph_obj(self) -> PreEmphasis:
        return PreEmphasis(self.preemph)

    def has_preemph(self) -> bool:
        return bool(np.any(self.preemph != 0))


@dataclass(frozen=True)
class TrainConfig:
    link: LinkConfig = LinkConfig()
    pulse: PulseConfig = PulseConfig()
    launch_power_dbm: float = 2.0
    batch_symbols: int = 4096  # per polarization
    iterations: int = 20000
    learn_rate: float = 1e-3
    lr_decay_points: tuple[float, ...] = (0.6, 0.85)  # fraction of iterations
    lr_decay_factor: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    train_encoder: bool = True
    train_preemph: bool = True
    train_decoder: bool = True
    rp_stages: int = 3
    rp_branches: int = 100
    rp_noise: bool = True
    channel: str = "rp"  # "rp" or "awgn" (symbol-level stand-in)
    awgn_snr_db: float = 15.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if self.batch_symbols <= 2 * model.PREEMPH_WINDOW + 1:
            raise ConfigurationError("batch shorter than the pre-emphasis window")
        if self.channel not in ("rp", "awgn"):
            raise ConfigurationError(f"unknown training channel {self.channel!r}")

    def rp_config(self) -> RpModelConfig:
        return RpModelConfig.default_for_link(
            self.link, self.rp_stages, self.rp_branches, with_noise=self.rp_noise)

    def lr_at(self, iteration: int) -> float:
        lr = self.learn_rate
        for frac in self.lr_decay_points:
            if iteration >= frac * self.iterations:
                lr *= self.lr_decay_factor
        return lr


@dataclass
class MetricReport:
    launch_power_dbm: float
    mi_mean: float
    mi_std: float
    snr_db: float
    seed: int
    channel: str  # "RP" or "SSFM"
    sdr_db: float | None = None

    def __post_init__(self):
        if self.mi_std < 0 or not np.isfinite(self.mi_mean):
            raise ConfigurationError("invalid metric report")


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, hyper: AdamHyper) -> None:
    """One bias-corrected Adam update, in place on `params` and `state`.

    Complex parameters are updated through their Wirtinger cogradients with
    real and imaginary parts treated as independent real coordinates.
    """
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            bad = {k: float(np.max(np.abs(v))) for k, v in grads.items()}
            raise NumericalDivergenceError(f"non-finite gradients: {bad}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        pv = p.view(np.float64) if np.iscomplexobj(p) else p
        gv = np.ascontiguousarray(g).view(np.float64) if np.iscomplexobj(g) else g
        if name not in state.m:
            state.m[name] = np.zeros_like(pv)
            state.v[name] = np.zeros_like(pv)
        m, v = state.m[name], state.v[name]
        m *= hyper.beta1
        m += (1 - hyper.beta1) * gv
        v *= hyper.beta2
        v += (1 - hyper.beta2) * gv * gv
        mhat = m / (1 - hyper.beta1**t)
        vhat = v / (1 - hyper.beta2**t)
        pv -= hyper.lr * mhat / (np.sqrt(vhat) + hyper.eps)


# ---------------------------------------------------------------------------
# channel helpers


def transmit_symbols(tx_syms: np.ndarray, link: LinkConfig, pulse: PulseConfig,
                     launch_power_dbm: float, *, rp_cfg: RpModelConfig | None = None,
                     ssfm_opts: SsfmOptions | None = None,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Symbols -> waveform -> channel -> CDC -> symbols (plain numpy path)."""
    baud = 64e9
    frame = SymbolFrame(tx_syms, baud)
    w = dsp.set_launch_power(dsp.modulate(frame, pulse), launch_power_dbm)
    if rp_cfg is not None:
        from .rp import rp_propagate
        y = rp_propagate(w, rp_cfg, link, rng)
    else:
        opts = ssfm_opts if ssfm_opts is not None else SsfmOptions()
        y = ssfm.ssfm_propagate(w, link, opts, rng)
    return dsp.demodulate(dsp.cdc(y, link), pulse, baud).syms


# ---------------------------------------------------------------------------
# training


def _forward_loss(cfg: TrainConfig, leaves: dict, msgs: np.ndarray,
                  rng: np.random.Generator):
    """Build the training loss on the active tape; returns (loss, rx_rms_value)."""
    points = leaves["constellation"]
    x = model.encode_arr(msgs, points)  # (2, B)
    if cfg.train_preemph or np.any(ag.value(leaves["preemph"])):
        xh, xv = model.pre_emphasize_arr(
            ag.gather(x, np.array(0)), ag.gather(x, np.array(1)), leaves["preemph"])
        x = ag.stack([xh, xv])
    if cfg.channel == "awgn":
        snr_lin = 10.0 ** (cfg.awgn_snr_db / 10.0)
        noise = rng.normal(scale=np.sqrt(0.5 / snr_lin), size=(2, cfg.batch_symbols, 2)
                           ).view(np.complex128)[..., 0]
        y = ag.add(x, noise)
    else:
        n_samples = cfg.batch_symbols * cfg.pulse.sps
        u = dsp.modulate_arr(x, cfg.pulse, n_samples)
        u = dsp.set_launch_power_arr(u, cfg.launch_power_dbm)
        y = rp_propagate_arr(u, cfg.rp_config(), cfg.link, 64e9 * cfg.pulse.sps,
                             rng if cfg.rp_noise else None)
        y = dsp.dispersion_arr(y, 64e9 * cfg.pulse.sps, cfg.link.beta2_ps2_km,
                               -cfg.link.total_length_km, n_samples)
        y = dsp.demodulate_arr(y, cfg.pulse, n_samples)
    y_flat = ag.reshape(y, (-1,))
    rms = ag.sqrt(ag.mean(ag.abs2(y_flat)))
    posteriors = model.decode_arr(y_flat, _decoder_leaves(leaves), rms)
    loss = model.xent_loss_arr(posteriors, msgs.ravel())
    return loss, float(ag.value(rms))


def _decoder_leaves(leaves: dict) -> dict:
    return {k: leaves[f"dec_{k}"] for k in ("w1", "b1", "w2", "b2", "w3", "b3")}


def _make_leaves(params: ModelParams, cfg: TrainConfig) -> dict:
    leaves = {
        "constellation": ag.Tensor(params.constellation, trainable=cfg.train_encoder),
        "preemph": ag.Tensor(params.preemph, trainable=cfg.train_preemph),
    }
    for k, v in params.decoder.items():
        leaves[f"dec_{k}"] = ag.Tensor(v, trainable=cfg.train_decoder)
    return leaves


def _trainable_names(cfg: TrainConfig) -> list[str]:
    names = []
    if cfg.train_encoder:
        names.append("constellation")
    if cfg.train_preemph:
        names.append("preemph")
    if cfg.train_decoder:
        names += [f"dec_{k}" for k in ("w1", "b1", "w2", "b2", "w3", "b3")]
    return names


def train_e2e(cfg: TrainConfig, params: ModelParams | None = None,
              callback=None) -> tuple[ModelParams, list[float]]:
    """Train enabled parameter groups over the auxiliary channel.

    Returns the trained parameters and the per-iteration loss history (nats).
    """
    params = params.copy() if params is not None else ModelParams.init(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    names = _trainable_names(cfg)
    if not names:
        raise ConfigurationError("no parameter group enabled for training")
    history: list[float] = []
    warmup = min(100, cfg.iterations // 10)
    for it in range(cfg.iterations):
        msgs = rng.integers(0, model.M_POINTS, size=(2, cfg.batch_symbols))
        leaves = _make_leaves(params, cfg)
        with ag.Tape() as tape:
            loss, rms = _forward_loss(cfg, leaves, msgs, rng)
        loss_val = float(ag.value(loss))
        history.append(loss_val)
        params.decoder_rms = rms
        if not np.isfinite(loss_val) or (it > warmup and loss_val > np.log(64.0) + 1.0):
            raise NumericalDivergenceError(
                f"training diverged at iteration {it}: loss {loss_val:.4f} "
                f"(history attached: {len(history)} entries)")
        grads = dict(zip(names, tape.gradient(loss, [leaves[n] for n in names])))
        hyper = AdamHyper(lr=cfg.lr_at(it), beta1=cfg.adam_beta1,
                          beta2=cfg.adam_beta2, eps=cfg.adam_eps)
        target = {}
        for n in names:
            if n == "constellation":
                target[n] = params.constellation
            elif n == "preemph":
                target[n] = params.preemph
            else:
                target[n] = params.decoder[n[4:]]
        adam_step(target, grads, state, hyper)
        if callback is not None:
            callback(it, loss_val, params)
    return params, history


# ---------------------------------------------------------------------------
# SSFM fine-tuning of the decoder


def generate_ssfm_corpus(params: ModelParams, cfg: TrainConfig, n_frames: int,
                         frame_symbols: int, seed: int,
                         ssfm_opts: SsfmOptions | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Independent SSFM propagations of the current transmitter: (labels, rx) pairs."""
    opts = ssfm_opts if ssfm_opts is not None else SsfmOptions()
    root = np.random.default_rng(seed)
    gens = root.spawn(n_frames)
    out = []
    for g in gens:
        msgs = g.integers(0, model.M_POINTS, size=(2, frame_symbols))
        tx = model.encode(msgs, params.constellation_obj())
        if params.has_preemph():
            tx = model.pre_emphasize(tx, params.preemph_obj())
        rx = transmit_symbols(tx, cfg.link, cfg.pulse, cfg.launch_power_dbm,
                              ssfm_opts=opts, rng=g)
        out.append((msgs, rx))
    return out


def finetune_decoder(params: ModelParams, cfg: TrainConfig,
                     corpus: list[tuple[np.ndarray, np.ndarray]] | None = None,
                     n_frames: int = 8, frame_symbols: int = 4096,
                     ssfm_opts: SsfmOptions | None = None) -> tuple[ModelParams, list[float]]:
    """Fine-tune only the decoder on SSFM propagation data."""
    params = params.copy()
    if cfg.iterations == 0:
        return params, []
    if corpus is None:
        corpus = generate_ssfm_corpus(params, cfg, n_frames, frame_symbols,
                                      seed=cfg.seed + 7919, ssfm_opts=ssfm_opts)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    dec_names = [f"dec_{k}" for k in ("w1", "b1", "w2", "b2", "w3", "b3")]
    history: list[float] = []
    rms_all = np.sqrt(np.mean([np.mean(np.abs(rx) ** 2) for _, rx in corpus]))
    params.decoder_rms = float(rms_all)
    for it in range(cfg.iterations):
        msgs, rx = corpus[int(rng.integers(len(corpus)))]
        leaves = {f"dec_{k}": ag.Tensor(v, trainable=True) for k, v in params.decoder.items()}
        with ag.Tape() as tape:
            posts = model.decode_arr(rx.ravel(), _decoder_leaves(leaves), rms_all)
            loss = model.xent_loss_arr(posts, msgs.ravel())
        loss_val = float(ag.value(loss))
        history.append(loss_val)
        grads = dict(zip(dec_names, tape.gradient(loss, [leaves[n] for n in dec_names])))
        hyper = AdamHyper(lr=cfg.lr_at(it), beta1=cfg.adam_beta1,
                          beta2=cfg.adam_beta2, eps=cfg.adam_eps)
        adam_step({n: params.decoder[n[4:]] for n in dec_names}, grads, state, hyper)
    return params, history


# ---------------------------------------------------------------------------
# evaluation


def evaluate(params: ModelParams, cfg: TrainConfig, launch_power_dbm: float,
             n_seq: int = 10, seq_len: int = 2 ** 16, seed: int = 0,
             channel: str = "ssfm", estimator: str = "nn",
             ssfm_opts: SsfmOptions | None = None,
             rp_cfg: RpModelConfig | None = None) -> MetricReport:
    """MI mean/std over independent random sequences, with the SNR alongside."""
    if estimator not in ("nn", "kde"):
        raise ConfigurationError(f"unknown estimator {estimator!r}")
    if channel not in ("ssfm", "rp"):
        raise ConfigurationError(f"unknown channel {channel!r}")
    root = np.random.default_rng(seed)
    gens = root.spawn(n_seq)
    mis, snrs = [], []
    for g in gens:
        msgs = g.integers(0, model.M_POINTS, size=(2, seq_len))
        tx = model.encode(msgs, params.constellation_obj())
        tx_pe = model.pre_emphasize(tx, params.preemph_obj()) if params.has_preemph() else tx
        if channel == "ssfm":
            rx = transmit_symbols(tx_pe, cfg.link, cfg.pulse, launch_power_dbm,
                                  ssfm_opts=ssfm_opts, rng=g)
        else:
            rcfg = rp_cfg if rp_cfg is not None else cfg.rp_config()
            rx = transmit_symbols(tx_pe, cfg.link, cfg.pulse, launch_power_dbm,
                                  rp_cfg=rcfg, rng=g)
        snrs.append(dsp.estimate_snr(SymbolFrame(tx, 64e9), SymbolFrame(rx, 64e9)))
        if estimator == "kde":
            # pool both polarizations: twice the kernels per class, less bias
            mis.append(model.kde_mi(rx.ravel(), msgs.ravel()))
        else:
            posts = model.decode(rx.ravel(), params.decoder_net())
            mis.append(model.mi_estimate(posts, msgs.ravel()))
    return MetricReport(
        launch_power_dbm=launch_power_dbm,
        mi_mean=float(np.mean(mis)),
        mi_std=float(np.std(mis)),
        snr_db=float(np.mean(snrs)),
        seed=seed,
        channel="SSFM" if channel == "ssfm" else "RP",
    )


def sweep_power(powers, recipe) -> list[MetricReport | Exception]:
    """Run `recipe(power_dbm) -> MetricReport` per power; failures are recorded
    in place and the sweep continues."""
    out: list[MetricReport | Exception] = []
    for p in powers:
        try:
            out.append(recipe(p))
        except Exception as exc:  # per-point failure must not kill the sweep
            out.append(exc)
    return out
