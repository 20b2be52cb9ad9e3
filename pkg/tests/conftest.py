import numpy as np
import pytest

from fiberae import Constellation, LinkConfig, PulseConfig, SymbolFrame, modulate
from fiberae import model
from fiberae.dsp import DualPolWaveform


@pytest.fixture
def link():
    return LinkConfig()


@pytest.fixture
def pulse():
    return PulseConfig()


def qam_frame(n_symbols: int, seed: int = 0) -> SymbolFrame:
    rng = np.random.default_rng(seed)
    msgs = rng.integers(0, 64, size=(2, n_symbols))
    return SymbolFrame(model.encode(msgs, Constellation.qam64()), 64e9)


def qam_waveform(n_symbols: int, seed: int = 0,
                 pulse: PulseConfig = PulseConfig()) -> DualPolWaveform:
    return modulate(qam_frame(n_symbols, seed), pulse)


@pytest.fixture(scope="session")
def frame_4k():
    return qam_frame(2 ** 12, seed=0)


@pytest.fixture(scope="session")
def wave_4k(frame_4k):
    return modulate(frame_4k, PulseConfig())
