"""Dual-polarization coherent fiber link simulator and end-to-end
autoencoder trainer.

Core pieces:

* :mod:`fiberae.ssfm` — split-step Fourier reference channel with EDFA noise;
* :mod:`fiberae.rp` — first-order regular-perturbation channel model, fully
  differentiable through :mod:`fiberae.autograd`;
* :mod:`fiberae.model` — trainable constellation, cubic pre-emphasis, decoder
  network, and MI estimators;
* :mod:`fiberae.pipeline` — training, fine-tuning, and evaluation loops;
* :mod:`fiberae.cli` — command-line front end.
"""

from .dsp import (
    DualPolWaveform,
    LinkConfig,
    PulseConfig,
    SymbolFrame,
    cdc,
    demodulate,
    estimate_snr,
    modulate,
    sdr,
    set_launch_power,
)
from .errors import ConfigurationError, FiberaeError, NumericalDivergenceError
from .model import Constellation, DecoderNet, PreEmphasis, init_preemph, kde_mi, mi_estimate
from .pipeline import (
    MetricReport,
    ModelParams,
    TrainConfig,
    evaluate,
    finetune_decoder,
    sweep_power,
    train_e2e,
    transmit_symbols,
)
from .rp import RpModelConfig, RpStageConfig, rp_propagate
from .ssfm import AmplifierModel, SsfmOptions, ase_psd, ssfm_propagate

__version__ = "0.1.0"

__all__ = [
    "AmplifierModel",
    "ConfigurationError",
    "Constellation",
    "DecoderNet",
    "DualPolWaveform",
    "FiberaeError",
    "LinkConfig",
    "MetricReport",
    "ModelParams",
    "NumericalDivergenceError",
    "PreEmphasis",
    "PulseConfig",
    "RpModelConfig",
    "RpStageConfig",
    "SsfmOptions",
    "SymbolFrame",
    "TrainConfig",
    "ase_psd",
    "cdc",
    "demodulate",
    "estimate_snr",
    "evaluate",
    "finetune_decoder",
    "init_preemph",
    "kde_mi",
    "mi_estimate",
    "modulate",
    "rp_propagate",
    "sdr",
    "set_launch_power",
    "ssfm_propagate",
    "sweep_power",
    "train_e2e",
    "transmit_symbols",
    "__version__",
]
