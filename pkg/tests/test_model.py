import numpy as np
import pytest

from fiberae import model
from fiberae.dsp import LinkConfig, PulseConfig
from fiberae.errors import ConfigurationError
from fiberae.model import (
    Constellation,
    DecoderNet,
    PreEmphasis,
    decode,
    encode,
    init_preemph,
    kde_mi,
    mi_estimate,
    pre_emphasize,
    qam64_grid,
    triplet_features,
    xent_loss,
)


def crandn(rng, *shape):
    return rng.normal(size=shape + (2,)).view(np.complex128)[..., 0]


# ---------------------------------------------------------------------------
# encoder


def test_qam64_grid_unit_power():
    pts = qam64_grid()
    assert pts.shape == (64,)
    assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0, abs=1e-12)


def test_encode_lookup():
    c = Constellation.qam64()
    msgs = np.array([[0, 5, 63], [10, 10, 2]])
    syms = encode(msgs, c)
    np.testing.assert_array_equal(syms, c.normalized[msgs])


def test_encode_mean_power():
    rng = np.random.default_rng(0)
    msgs = rng.integers(0, 64, size=(2, 2 ** 16))
    syms = encode(msgs, Constellation.qam64())
    assert np.mean(np.abs(syms) ** 2) == pytest.approx(1.0, abs=0.02)


def test_encode_nearest_neighbor_roundtrip():
    c = Constellation.qam64()
    syms = encode(np.arange(64).reshape(2, 32), c)
    decided = np.argmin(np.abs(syms[..., None] - c.normalized), axis=-1)
    np.testing.assert_array_equal(decided, np.arange(64).reshape(2, 32))


def test_encode_out_of_range():
    with pytest.raises(ConfigurationError):
        encode(np.array([[64], [0]]), Constellation.qam64())


def test_normalization_exact_for_raw_points():
    rng = np.random.default_rng(1)
    c = Constellation(crandn(rng, 64) * 3.7)
    assert np.mean(np.abs(c.normalized) ** 2) == pytest.approx(1.0, rel=1e-12)


# ---------------------------------------------------------------------------
# pre-emphasis


def test_preemph_zero_identity():
    rng = np.random.default_rng(2)
    syms = crandn(rng, 2, 64)
    out = pre_emphasize(syms, PreEmphasis.zero())
    np.testing.assert_array_equal(out, syms)


def test_preemph_single_coefficient_collapse():
    rng = np.random.default_rng(3)
    xh = crandn(rng, 64)
    syms = np.stack([xh, np.zeros_like(xh)])
    c = 0.05 - 0.02j
    pe = PreEmphasis.zero().coeffs.copy()
    pe[10, 10] = c  # C[0, 0]
    out = pre_emphasize(syms, PreEmphasis(pe))
    np.testing.assert_allclose(out[0], xh + c * np.abs(xh) ** 2 * xh, rtol=1e-12)


def brute_force_delta(syms, coeffs, pol, t):
    w = model.PREEMPH_WINDOW
    n = syms.shape[-1]
    x, y = syms[pol], syms[1 - pol]
    total = 0.0
    for m in range(-w, w + 1):
        for nn in range(-w, w + 1):
            bracket = (x[(t + nn) % n] * np.conj(x[(t + m + nn) % n])
                       + y[(t + nn) % n] * np.conj(y[(t + m + nn) % n]))
            total += coeffs[m + w, nn + w] * x[(t + m) % n] * bracket
    return total


def test_preemph_matches_brute_force():
    rng = np.random.default_rng(4)
    syms = crandn(rng, 2, 48)
    coeffs = crandn(rng, 21, 21) * 0.01
    out = pre_emphasize(syms, PreEmphasis(coeffs))
    for pol, t in [(0, 0), (0, 17), (1, 5), (1, 47)]:
        expected = syms[pol, t] + brute_force_delta(syms, coeffs, pol, t)
        assert out[pol, t] == pytest.approx(expected, rel=1e-10)


def test_preemph_triplet_features_consistency():
    rng = np.random.default_rng(5)
    syms = crandn(rng, 2, 40)
    coeffs = crandn(rng, 21, 21) * 0.01
    out = pre_emphasize(syms, PreEmphasis(coeffs))
    delta = (triplet_features(syms) @ coeffs.ravel()).reshape(2, 40)
    np.testing.assert_allclose(out, syms + delta, rtol=1e-10)


def test_preemph_first_order_cancellation():
    rng = np.random.default_rng(6)
    syms = crandn(rng, 2, 64)
    coeffs = crandn(rng, 21, 21)

    def residual(scale):
        pe = PreEmphasis(coeffs * scale)
        neg = PreEmphasis(-coeffs * scale)
        back = pre_emphasize(pre_emphasize(syms, pe), neg)
        return np.linalg.norm(back - syms)

    r1, r2 = residual(1e-2), residual(5e-3)
    assert r2 < r1 / 3.0  # quadratic shrink


def test_preemph_polarization_symmetry():
    rng = np.random.default_rng(7)
    syms = crandn(rng, 2, 48)
    coeffs = crandn(rng, 21, 21) * 0.02
    out = pre_emphasize(syms, PreEmphasis(coeffs))
    swapped = pre_emphasize(syms[::-1], PreEmphasis(coeffs))
    np.testing.assert_allclose(swapped, out[::-1], rtol=1e-12)


def test_preemph_short_frame_errors():
    with pytest.raises(ConfigurationError):
        pre_emphasize(np.zeros((2, 10), dtype=complex), PreEmphasis.zero())


def test_preemph_validation():
    with pytest.raises(ConfigurationError):
        PreEmphasis(np.zeros((5, 5), dtype=complex))
    bad = np.zeros((21, 21), dtype=complex)
    bad[0, 0] = np.nan
    with pytest.raises(ConfigurationError):
        PreEmphasis(bad)


def test_init_preemph_gamma_zero():
    pe = init_preemph(LinkConfig(gamma_w_km=0.0), PulseConfig())
    assert not np.any(pe.coeffs)


@pytest.mark.slow
def test_init_preemph_structure_and_gain():
    link = LinkConfig(n_spans=10)
    pulse = PulseConfig()
    pe = init_preemph(link, pulse, n_symbols=2 ** 12, seed=5)
    c = np.abs(pe.coeffs)
    border = np.concatenate([c[0], c[-1], c[:, 0], c[:, -1]])
    assert border.max() < c[10, 10]  # coefficients decay toward the window edge

    # A/B over the split-step channel: pre-emphasis must improve the SNR
    from fiberae.dsp import SymbolFrame, estimate_snr
    from fiberae.pipeline import transmit_symbols
    from fiberae.ssfm import SsfmOptions

    rng = np.random.default_rng(6)
    msgs = rng.integers(0, 64, size=(2, 2 ** 12))
    tx = encode(msgs, Constellation.qam64())
    opts = SsfmOptions(steps_per_span=100, include_ase=False)
    power = 4.0
    rx_plain = transmit_symbols(tx, link, pulse, power, ssfm_opts=opts)
    rx_pe = transmit_symbols(pre_emphasize(tx, pe), link, pulse, power, ssfm_opts=opts)
    snr_plain = estimate_snr(SymbolFrame(tx, 64e9), SymbolFrame(rx_plain, 64e9))
    snr_pe = estimate_snr(SymbolFrame(tx, 64e9), SymbolFrame(rx_pe, 64e9))
    assert snr_pe > snr_plain


# ---------------------------------------------------------------------------
# decoder


def test_decoder_rows_sum_to_one():
    rng = np.random.default_rng(8)
    net = DecoderNet.init(0)
    posts = decode(crandn(rng, 100), net)
    assert posts.shape == (100, 64)
    np.testing.assert_allclose(posts.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(posts > 0)


def test_decoder_zero_final_layer_uniform():
    net = DecoderNet.init(0)
    net = DecoderNet(net.w1, net.b1, net.w2, net.b2,
                     np.zeros_like(net.w3), np.zeros_like(net.b3))
    posts = decode(np.array([0.3 + 0.1j, -1.0j]), net)
    np.testing.assert_allclose(posts, 1.0 / 64, atol=1e-12)


def test_decoder_pointwise_batch_invariance():
    rng = np.random.default_rng(9)
    net = DecoderNet.init(1)
    y = crandn(rng, 10)
    full = decode(y, net)
    np.testing.assert_allclose(decode(y[3:4], net)[0], full[3], rtol=1e-12)


def test_decoder_logit_shift_invariance():
    net = DecoderNet.init(2)
    shifted = DecoderNet(net.w1, net.b1, net.w2, net.b2, net.w3, net.b3 + 5.0)
    y = np.array([0.5 - 0.2j])
    np.testing.assert_allclose(decode(y, shifted), decode(y, net), atol=1e-12)


# ---------------------------------------------------------------------------
# objectives


def test_xent_uniform():
    posts = np.full((10, 64), 1.0 / 64)
    labels = np.arange(10)
    assert xent_loss(posts, labels) == pytest.approx(np.log(64.0), rel=1e-12)


def test_xent_perfect():
    posts = np.zeros((4, 64))
    labels = np.array([1, 2, 3, 4])
    posts[np.arange(4), labels] = 1.0
    assert xent_loss(posts, labels) == pytest.approx(0.0, abs=1e-12)


def test_xent_hand_case():
    posts = np.full((2, 64), 1e-9)
    posts[0, 3] = 0.5
    posts[1, 7] = 0.25
    expected = -(np.log(0.5) + np.log(0.25)) / 2
    assert xent_loss(posts, np.array([3, 7])) == pytest.approx(expected, rel=1e-12)


def test_xent_label_range():
    with pytest.raises(ConfigurationError):
        xent_loss(np.full((1, 64), 1 / 64), np.array([64]))


def test_mi_estimate_bounds():
    labels = np.arange(10)
    uniform = np.full((10, 64), 1.0 / 64)
    assert mi_estimate(uniform, labels) == pytest.approx(0.0, abs=1e-9)
    perfect = np.zeros((10, 64))
    perfect[np.arange(10), labels] = 1.0
    assert mi_estimate(perfect, labels) == pytest.approx(6.0, abs=1e-9)


# ---------------------------------------------------------------------------
# KDE estimator


def test_kde_requires_enough_samples():
    with pytest.raises(ConfigurationError):
        kde_mi(np.zeros(100, dtype=complex), np.zeros(100, dtype=int))


def test_kde_high_snr_near_capacity():
    rng = np.random.default_rng(10)
    pts = qam64_grid()
    n = 2 ** 15
    labels = rng.integers(0, 64, size=n)
    sigma2 = 10 ** (-3.0)  # 30 dB
    rx = pts[labels] + crandn(rng, n) * np.sqrt(sigma2 / 2)
    assert kde_mi(rx, labels) == pytest.approx(6.0, abs=0.1)
