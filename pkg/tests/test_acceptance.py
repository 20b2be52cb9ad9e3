"""End-to-end acceptance gate: the nine headline guarantees of the package.

Each test pins one externally meaningful property of the simulator or the
training pipeline at full fidelity.  Tests marked `slow` take minutes;
tests marked `paper_scale` take hours and are excluded from the default run.
"""

import time

import numpy as np
import pytest

from fiberae import autograd as ag
from fiberae import dsp, model, parallel, pipeline
from fiberae.dsp import (
    DualPolWaveform,
    LinkConfig,
    PulseConfig,
    SymbolFrame,
    dispersion_op,
    sdr,
    set_launch_power,
)
from fiberae.pipeline import ModelParams, TrainConfig, evaluate, finetune_decoder, train_e2e
from fiberae.rp import RpModelConfig, RpStageConfig, rp_propagate
from fiberae.ssfm import SsfmOptions, ssfm_propagate

from conftest import qam_waveform

BAUD = 64e9


# ---------------------------------------------------------------------------
# 1. linear-regime equivalence


def test_linear_regime_equivalence():
    t0 = time.time()
    link = LinkConfig(gamma_w_km=0.0)
    w = set_launch_power(qam_waveform(2 ** 14, seed=0), 0.0)

    outs = {
        "closed_form": dispersion_op(w, link.beta2_ps2_km, link.total_length_km),
        "ssfm": ssfm_propagate(w, link, SsfmOptions(steps_per_span=4, include_ase=False)),
    }
    stagings = {
        "rp_1x30": (RpStageConfig(2400.0, 30),),
        "rp_3x10": (RpStageConfig(800.0, 10),) * 3,
        "rp_2x15": (RpStageConfig(1200.0, 15),) * 2,
    }
    for name, stages in stagings.items():
        outs[name] = rp_propagate(w, RpModelConfig(stages, with_noise=False), link)

    names = list(outs)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            num = np.linalg.norm(outs[a].samples - outs[b].samples)
            den = np.linalg.norm(outs[b].samples)
            assert num / den < 1e-9, f"{a} vs {b}: {num / den:.2e}"
    assert time.time() - t0 < 30.0


# ---------------------------------------------------------------------------
# 2. gradient correctness of the full training graph


def test_full_graph_gradients():
    cfg = TrainConfig(link=LinkConfig(n_spans=4), pulse=PulseConfig(filter_span=32),
                      batch_symbols=64, iterations=1, rp_stages=1, rp_branches=4,
                      launch_power_dbm=2.0, seed=0)
    params = ModelParams.init(0)
    params.preemph[:] = 0.0
    rng0 = np.random.default_rng(11)
    msgs = rng0.integers(0, 64, size=(2, cfg.batch_symbols))

    def loss_eager(values: dict) -> float:
        # fresh generator per call so every noise draw is identical
        loss, _ = pipeline._forward_loss(cfg, values, msgs, np.random.default_rng(7))
        return float(ag.value(loss))

    leaves = pipeline._make_leaves(params, cfg)
    with ag.Tape() as tape:
        loss, _ = pipeline._forward_loss(cfg, leaves, msgs, np.random.default_rng(7))
    names = list(leaves)
    grads = dict(zip(names, tape.gradient(loss, [leaves[n] for n in names])))

    coord_rng = np.random.default_rng(3)
    eps = 1e-5
    for name in names:
        base = np.array(ag.value(leaves[name]))
        g = grads[name]
        idx = coord_rng.choice(base.size, size=min(6, base.size), replace=False)
        parts = [("r", eps)] + ([("i", 1j * eps)] if np.iscomplexobj(base) else [])
        analytic, fd = [], []
        for i in idx:
            for part, step in parts:
                if part == "r":
                    analytic.append(2 * g.ravel()[i].real if np.iscomplexobj(base)
                                    else float(g.ravel()[i]))
                else:
                    analytic.append(2 * g.ravel()[i].imag)
                values = {n: np.array(ag.value(leaves[n])) for n in names}
                values[name].ravel()[i] = base.ravel()[i] + step
                fp = loss_eager(values)
                values[name].ravel()[i] = base.ravel()[i] - step
                fm = loss_eager(values)
                fd.append((fp - fm) / (2 * eps))
        analytic, fd = np.array(analytic), np.array(fd)
        scale = max(np.abs(analytic).max(), np.abs(fd).max(), 1e-8)
        err = np.abs(analytic - fd).max() / scale
        assert err < 1e-4, f"group {name}: max rel err {err:.2e}"


# ---------------------------------------------------------------------------
# 3. SNR of the split-step reference with amplifier noise

SSFM_SNR_DB = {-1.0: 14.1556, 0.0: 14.9434, 1.0: 15.5519, 2.0: 15.8656, 3.0: 15.7550}


@pytest.mark.slow
def test_ssfm_snr_vs_reference_curve(link, pulse):
    opts = SsfmOptions(steps_per_span=200, include_ase=True)
    root = np.random.default_rng(0)
    for power, expected in SSFM_SNR_DB.items():
        g = root.spawn(1)[0]
        msgs = g.integers(0, 64, size=(2, 2 ** 16))
        tx = model.encode(msgs, model.Constellation.qam64())
        rx = pipeline.transmit_symbols(tx, link, pulse, power, ssfm_opts=opts, rng=g)
        snr = dsp.estimate_snr(SymbolFrame(tx, BAUD), SymbolFrame(rx, BAUD))
        assert snr == pytest.approx(expected, abs=0.3), f"{power} dBm: {snr:.3f}"


# ---------------------------------------------------------------------------
# 4. perturbation-model accuracy against the split-step reference

RP_STAGES = (RpStageConfig(800.0, 100),) * 3


@pytest.mark.slow
def test_rp_accuracy_vs_ssfm(link, pulse):
    powers = [-5.0, -3.0, -1.0, 0.0, 1.0, 2.0, 2.5]
    sdrs, gaps = {}, {}
    for power in powers:
        w = set_launch_power(qam_waveform(2 ** 14, seed=0), power)
        ref = ssfm_propagate(w, link, SsfmOptions(steps_per_span=200, include_ase=False))
        out = rp_propagate(w, RpModelConfig(RP_STAGES, with_noise=False), link)
        sdrs[power] = sdr(out, ref)
        # SNR of the noisy perturbation model after dispersion compensation
        g = np.random.default_rng(100 + int(10 * power))
        msgs = g.integers(0, 64, size=(2, 2 ** 14))
        tx = model.encode(msgs, model.Constellation.qam64())
        rx = pipeline.transmit_symbols(tx, link, pulse, power,
                                       rp_cfg=RpModelConfig(RP_STAGES, with_noise=True),
                                       rng=g)
        snr = dsp.estimate_snr(SymbolFrame(tx, BAUD), SymbolFrame(rx, BAUD))
        gaps[power] = sdrs[power] - snr

    assert sdrs[0.0] == pytest.approx(35.924, abs=1.5)
    vals = [sdrs[p] for p in powers]
    assert all(a > b for a, b in zip(vals, vals[1:])), f"SDR not monotone: {sdrs}"
    for power in powers:
        assert gaps[power] >= 13.0, f"{power} dBm: SDR-SNR gap {gaps[power]:.2f}"


# ---------------------------------------------------------------------------
# 5 + 6. mutual-information estimators


def awgn_quadrature_mi(snr_db: float, n_nodes: int = 48) -> float:
    """2-D Gauss-Hermite ground truth for 64QAM over AWGN, bits/sym."""
    sigma2 = 10 ** (-snr_db / 10.0)
    pts = model.qam64_grid()
    nodes, wts = np.polynomial.hermite.hermgauss(n_nodes)
    s = np.sqrt(sigma2 / 2.0)
    nr, ni = np.meshgrid(nodes, nodes)
    ww = np.outer(wts, wts).ravel() / np.pi
    noise = (np.sqrt(2.0) * s * (nr + 1j * ni)).ravel()
    acc = 0.0
    for k in range(64):
        y = pts[k] + noise
        d2 = np.abs(y[:, None] - pts[None, :]) ** 2
        lse = -d2 / sigma2
        m = lse.max(axis=1, keepdims=True)
        log_sum = m[:, 0] + np.log(np.exp(lse - m).sum(axis=1))
        log_num = -np.abs(y - pts[k]) ** 2 / sigma2
        acc += np.sum(ww * (log_num - log_sum))
    return 6.0 + acc / 64 / np.log(2.0)


@pytest.fixture(scope="module")
def ssfm_2dbm_data():
    """Two independent 2^16-symbol dual-pol sequences through the noisy link,
    with the pooled-polarization KDE MI of each sequence alongside."""
    link, pulse = LinkConfig(), PulseConfig()
    opts = SsfmOptions(steps_per_span=200, include_ase=True)
    root = np.random.default_rng(0)
    out = []
    for g in root.spawn(2):
        msgs = g.integers(0, 64, size=(2, 2 ** 16))
        tx = model.encode(msgs, model.Constellation.qam64())
        rx = pipeline.transmit_symbols(tx, link, pulse, 2.0, ssfm_opts=opts, rng=g)
        out.append((rx, msgs, model.kde_mi(rx.ravel(), msgs.ravel())))
    return out


@pytest.mark.slow
def test_mi_estimators_awgn_oracle():
    snr_db = 15.0
    mi_true = awgn_quadrature_mi(snr_db)
    assert mi_true == pytest.approx(4.6814, abs=2e-3)

    sigma2 = 10 ** (-snr_db / 10.0)
    pts = model.qam64_grid()
    rng = np.random.default_rng(42)
    n = 2 ** 16
    labels = rng.integers(0, 64, size=n)
    rx = pts[labels] + rng.normal(scale=np.sqrt(sigma2 / 2),
                                  size=(n, 2)).view(np.complex128)[:, 0]
    mi_kde = model.kde_mi(rx, labels)
    assert abs(mi_kde - mi_true) < 0.05, f"KDE {mi_kde:.4f} vs truth {mi_true:.4f}"

    cfg = TrainConfig(channel="awgn", awgn_snr_db=snr_db, iterations=2000,
                      batch_symbols=4096, train_encoder=False, train_preemph=False,
                      seed=0)
    params, _ = train_e2e(cfg)
    m2 = rng.integers(0, 64, size=n)
    rx2 = pts[m2] + rng.normal(scale=np.sqrt(sigma2 / 2),
                               size=(n, 2)).view(np.complex128)[:, 0]
    mi_nn = model.mi_estimate(model.decode(rx2, params.decoder_net()), m2)
    assert abs(mi_nn - mi_true) < 0.05, f"NN {mi_nn:.4f} vs truth {mi_true:.4f}"


@pytest.mark.slow
def test_kde_exceeds_nn_on_fiber_data(ssfm_2dbm_data):
    params = ModelParams.init(0)
    cfg = TrainConfig(iterations=200, train_encoder=False, train_preemph=False,
                      launch_power_dbm=2.0, seed=3, lr_decay_points=(0.5, 0.8))
    params, _ = finetune_decoder(params, cfg, n_frames=6, frame_symbols=4096)
    for rx, msgs, mi_kde in ssfm_2dbm_data:
        mi_nn = model.mi_estimate(model.decode(rx.ravel(), params.decoder_net()),
                                  msgs.ravel())
        assert mi_kde >= mi_nn


@pytest.mark.slow
def test_baseline_kde_mi_at_2dbm(ssfm_2dbm_data):
    mi = np.mean([mi_kde for _, _, mi_kde in ssfm_2dbm_data])
    assert mi == pytest.approx(4.9547, abs=0.05), f"KDE MI {mi:.4f}"


# ---------------------------------------------------------------------------
# 7. end-to-end learning gains


@pytest.mark.slow
def test_shaping_gain_reduced():
    # reduced-size variant: 10-span link at 5 dBm, geometric shaping only
    link = LinkConfig(n_spans=10)
    power = 5.0

    def ft_and_eval(params):
        ftc = TrainConfig(link=link, iterations=600, train_encoder=False,
                          train_preemph=False, launch_power_dbm=power, seed=3,
                          lr_decay_points=(0.5, 0.8))
        p2, _ = finetune_decoder(params, ftc, frame_symbols=4096, n_frames=6)
        return evaluate(p2, ftc, power, n_seq=2, seq_len=2 ** 14, seed=91,
                        channel="ssfm", estimator="nn")

    base = ft_and_eval(ModelParams.init(0))
    cfg = TrainConfig(link=link, batch_symbols=8192, iterations=300,
                      rp_stages=1, rp_branches=20, train_preemph=False,
                      launch_power_dbm=power, seed=0)
    shaped, _ = train_e2e(cfg)
    gained = ft_and_eval(shaped)
    gain = gained.mi_mean - base.mi_mean
    assert gain >= 0.03, f"shaping gain {gain:+.4f} bits"


@pytest.mark.paper_scale
def test_shaping_gain_full_scale(link):
    # full 30-span system around the baseline optimum launch power
    powers = [1.75, 2.0, 2.25, 2.5, 2.75]

    def kde_at(params, power):
        cfg = TrainConfig(link=link, launch_power_dbm=power, seed=3)
        rep = evaluate(params, cfg, power, n_seq=2, seq_len=2 ** 16, seed=91,
                       channel="ssfm", estimator="kde")
        return rep.mi_mean

    def sweep(params):
        return {p: kde_at(params, p) for p in powers}

    base = sweep(ModelParams.init(0))
    p_base = max(base, key=base.get)

    gs_cfg = TrainConfig(link=link, batch_symbols=8192, iterations=2000,
                         rp_stages=3, rp_branches=100, train_preemph=False,
                         launch_power_dbm=2.25, seed=0,
                         lr_decay_points=(0.5, 0.8))
    gs_params, _ = train_e2e(gs_cfg)
    gs = sweep(gs_params)

    joint_cfg = TrainConfig(link=link, batch_symbols=8192, iterations=2000,
                            rp_stages=3, rp_branches=100,
                            launch_power_dbm=2.5, seed=0,
                            lr_decay_points=(0.5, 0.8))
    joint_params, _ = train_e2e(joint_cfg)
    joint = sweep(joint_params)
    p_joint = max(joint, key=joint.get)

    assert max(gs.values()) - base[p_base] >= 0.08
    assert max(joint.values()) - base[p_base] >= 0.14
    assert p_joint - p_base >= 0.25


# ---------------------------------------------------------------------------
# 8. parallel determinism


def test_parallel_determinism_rp(link):
    w = set_launch_power(qam_waveform(2 ** 12, seed=5), 0.0)
    cfg = RpModelConfig((RpStageConfig(800.0, 20),) * 3, with_noise=True)
    outs = []
    try:
        for n in (1, 4, 8):
            parallel.set_threads(n)
            outs.append(rp_propagate(w, cfg, link, np.random.default_rng(17)).samples)
    finally:
        parallel.set_threads(1)
    np.testing.assert_array_equal(outs[0], outs[1])
    np.testing.assert_array_equal(outs[0], outs[2])


def test_parallel_determinism_training():
    cfg = TrainConfig(link=LinkConfig(n_spans=2), pulse=PulseConfig(filter_span=32),
                      batch_symbols=128, iterations=3, rp_stages=1, rp_branches=10,
                      seed=0)
    results = []
    try:
        for n in (1, 4, 8):
            parallel.set_threads(n)
            params, history = train_e2e(cfg)
            results.append((params, history))
    finally:
        parallel.set_threads(1)
    for params, history in results[1:]:
        assert history == results[0][1]
        np.testing.assert_array_equal(params.constellation, results[0][0].constellation)
        np.testing.assert_array_equal(params.decoder["w3"], results[0][0].decoder["w3"])


# ---------------------------------------------------------------------------
# 9. perturbation-model convergence in the branch count


@pytest.mark.slow
def test_rp_converges_with_branch_count(link):
    w = set_launch_power(qam_waveform(2 ** 14, seed=0), 0.0)
    ref = ssfm_propagate(w, link, SsfmOptions(steps_per_span=200, include_ase=False))
    sdrs = []
    for n_br in (50, 100, 200):
        cfg = RpModelConfig((RpStageConfig(800.0, n_br),) * 3, with_noise=False)
        sdrs.append(sdr(rp_propagate(w, cfg, link), ref))
    assert sdrs[0] < sdrs[1] < sdrs[2], f"SDR not increasing: {sdrs}"
