"""Signal-generation checks.

Oracles: constellations are validated against their defining properties
(sizes, exact unit power, symmetry, one-bit neighbor labels) and a few
pinned coordinates; the pulse-shaping taps are validated against a
numerical inverse Fourier transform of the square-root raised-cosine
spectrum, an entirely frequency-domain construction.
"""
import numpy as np
import pytest

from ssmamc.dataio import Dataset
from ssmamc.siggen import (
    ALLOWED_LENGTHS,
    SCHEMES,
    ChannelSpec,
    DatasetSpec,
    add_awgn,
    bits_per_symbol,
    constellation,
    generate,
    generate_all,
    modulate,
    rrc_taps,
    sample_rng,
)

BITS = {"bpsk": 1, "qpsk": 2, "psk8": 3, "pam4": 2, "qam16": 4, "qam64": 6,
        "qam256": 8, "qam1024": 10, "qam32x": 5, "qam128x": 7, "qam512x": 9}


def simpson(y, x):
    h = x[1] - x[0]
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def rrc_taps_oracle(beta, span, sps):
    """Taps via quadrature on H(f) = sqrt(raised-cosine spectrum)."""
    n = span * sps + 1
    t = (np.arange(n) - (n - 1) / 2.0) / sps
    f = np.linspace(0.0, (1.0 + beta) / 2.0, 50001)
    spectrum = np.where(
        f <= (1.0 - beta) / 2.0, 1.0,
        0.5 * (1.0 + np.cos(np.pi / beta * (f - (1.0 - beta) / 2.0))))
    hf = np.sqrt(np.clip(spectrum, 0.0, None))
    taps = np.array([2.0 * simpson(hf * np.cos(2.0 * np.pi * f * tk), f)
                     for tk in t])
    return taps / np.sqrt(np.sum(taps * taps))


def popcount(n):
    return bin(n).count("1")


class TestConstellations:
    @pytest.mark.parametrize("tag", SCHEMES)
    def test_size_power_and_mean(self, tag):
        pts = constellation(tag)
        assert pts.size == 2 ** BITS[tag]
        assert abs(np.mean(np.abs(pts) ** 2) - 1.0) < 1e-12
        assert abs(pts.mean()) < 1e-12
        assert len(np.unique(np.round(pts, 12))) == pts.size

    def test_pinned_points(self):
        assert set(np.round(constellation("bpsk"), 12)) == {1.0, -1.0}
        qpsk = constellation("qpsk")
        s = 1.0 / np.sqrt(2.0)
        assert set(np.round(qpsk, 12)) == {
            complex(round(a * s, 12), round(b * s, 12))
            for a in (1, -1) for b in (1, -1)}
        assert np.any(np.isclose(constellation("qam16"), (3 + 3j) / np.sqrt(10)))
        pam = np.sort(constellation("pam4").real)
        assert np.allclose(pam, np.array([-3, -1, 1, 3]) / np.sqrt(5))
        assert np.allclose(constellation("pam4").imag, 0.0)

    @pytest.mark.parametrize("tag", ["qam16", "qam64", "qam256"])
    def test_square_grid_neighbors_differ_in_one_bit(self, tag):
        pts = constellation(tag)
        side = int(np.sqrt(pts.size))
        res = np.unique(np.round(pts.real, 12))
        ims = np.unique(np.round(pts.imag, 12))
        assert len(res) == len(ims) == side
        grid = {}
        for idx, p in enumerate(pts):
            i = int(np.searchsorted(res, round(p.real, 12)))
            q = int(np.searchsorted(ims, round(p.imag, 12)))
            grid[(i, q)] = idx
        for (i, q), idx in grid.items():
            for di, dq in ((1, 0), (0, 1)):
                if (i + di, q + dq) in grid:
                    assert popcount(idx ^ grid[(i + di, q + dq)]) == 1

    def test_psk8_ring_neighbors_differ_in_one_bit(self):
        pts = constellation("psk8")
        order = np.argsort(np.angle(pts) % (2 * np.pi))
        assert np.allclose(np.abs(pts), 1.0)
        for k in range(8):
            assert popcount(order[k] ^ order[(k + 1) % 8]) == 1

    @pytest.mark.parametrize("tag,removed", [("qam32x", 1), ("qam128x", 2),
                                             ("qam512x", 4)])
    def test_cross_shapes(self, tag, removed):
        pts = constellation(tag)
        side = {32: 6, 128: 12, 512: 24}[pts.size]
        assert pts.size == side * side - 4 * removed * removed
        # all points sit on the odd-integer lattice of one common spacing
        spacing = np.min(np.abs(np.unique(np.round(pts.real, 12))[1:]
                                - np.unique(np.round(pts.real, 12))[:-1]))
        coords = np.concatenate([pts.real, pts.imag]) / (spacing / 2.0)
        assert np.allclose(coords, np.round(coords), atol=1e-9)
        assert np.all(np.abs(np.round(coords)).astype(int) % 2 == 1)
        # closed under negation and conjugation
        as_set = set(np.round(pts, 9))
        assert {np.round(-p, 9) for p in pts} == as_set
        assert {np.round(p.conjugate(), 9) for p in pts} == as_set
        # the largest |re| never co-occurs with the largest |im|
        m = np.round(pts.real, 9).max()
        corneriest = (np.abs(np.round(pts.real, 9)) == m) \
            & (np.abs(np.round(pts.imag, 9)) == m)
        assert not corneriest.any()

    def test_bits_per_symbol_table(self):
        for tag, bits in BITS.items():
            assert bits_per_symbol(tag) == bits

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            constellation("fm")


class TestPulseShaping:
    @pytest.mark.parametrize("beta", [0.25, 0.35, 0.5, 1.0])
    def test_taps_match_spectrum_quadrature(self, beta):
        got = rrc_taps(beta, 8, 8)
        want = rrc_taps_oracle(beta, 8, 8)
        assert np.abs(got - want).max() < 1e-6

    def test_unit_energy_symmetry_and_peak(self):
        for beta, span, sps in [(0.35, 8, 8), (0.25, 6, 4), (1.0, 4, 2)]:
            h = rrc_taps(beta, span, sps)
            assert h.size == span * sps + 1
            assert abs(np.sum(h * h) - 1.0) < 1e-12
            assert np.allclose(h, h[::-1], rtol=0, atol=1e-15)
            assert h.argmax() == span * sps // 2

    def test_removable_singularities_are_filled(self):
        # beta = 0.25 puts |t| = 1 on the tap grid; beta = 0.5 puts 0.5 there
        for beta in (0.25, 0.5):
            h = rrc_taps(beta, 8, 8)
            assert np.isfinite(h).all()


class TestModulate:
    def test_ideal_sps1_is_verbatim(self):
        rng = np.random.default_rng(0)
        sym = rng.integers(0, 4, 64)
        ch = ChannelSpec(pulse="ideal", sps=1)
        out = modulate(sym, "qpsk", ch, 64)
        assert np.array_equal(out, constellation("qpsk")[sym])

    def test_ideal_upsampling_layout(self):
        sym = np.array([0, 1, 2, 3, 0, 1])
        ch = ChannelSpec(pulse="ideal", sps=4)
        out = modulate(sym, "qpsk", ch, 20)
        pts = constellation("qpsk")
        assert np.allclose(out[::4], pts[sym[:5]] * 2.0)  # sqrt(sps) gain
        mask = np.ones(20, bool)
        mask[::4] = False
        assert np.all(out[mask] == 0)

    def test_exact_length_and_near_unit_power(self):
        rng = np.random.default_rng(1)
        ch = ChannelSpec(snr_db=0.0, pulse="rrc", rolloff=0.35, span=8, sps=8)
        n_sym = -(-4096 // 8) + 8
        out = modulate(rng.integers(0, 16, n_sym), "qam16", ch, 4096)
        assert out.shape == (4096,)
        assert abs(np.mean(np.abs(out) ** 2) - 1.0) < 0.05

    def test_power_stable_across_lengths(self):
        rng = np.random.default_rng(2)
        ch = ChannelSpec(pulse="rrc", sps=8, span=8)
        for length in (128, 1000, 2048):
            n_sym = -(-length // 8) + 8
            powers = [np.mean(np.abs(modulate(rng.integers(0, 4, n_sym),
                                              "qpsk", ch, length)) ** 2)
                      for _ in range(20)]
            assert abs(np.mean(powers) - 1.0) < 0.05

    def test_too_few_symbols_rejected(self):
        ch = ChannelSpec(pulse="rrc", sps=8, span=8)
        with pytest.raises(ValueError):
            modulate(np.zeros(10, int), "qpsk", ch, 4096)
        with pytest.raises(ValueError):
            modulate(np.zeros(10, int), "qpsk", ch, 0)


class TestNoise:
    def test_noise_power_calibrated(self):
        rng = np.random.default_rng(0)
        x = np.ones(200000, dtype=complex)
        y = add_awgn(x, 10.0, rng)
        noise_power = np.mean(np.abs(y - x) ** 2)
        assert abs(noise_power - 0.1) / 0.1 < 0.01

    def test_negative_snr_means_more_noise_than_signal(self):
        rng = np.random.default_rng(1)
        x = np.full(100000, 1 + 1j) / np.sqrt(2)
        y = add_awgn(x, -10.0, rng)
        noise_power = np.mean(np.abs(y - x) ** 2)
        assert abs(noise_power - 10.0) / 10.0 < 0.01

    def test_extreme_snr_is_passthrough(self):
        rng = np.random.default_rng(2)
        x = np.exp(1j * np.linspace(0, 3, 512))
        y = add_awgn(x, 300.0, rng)
        assert np.abs(y - x).max() < 1e-12

    def test_zero_power_rejected(self):
        with pytest.raises(ValueError):
            add_awgn(np.zeros(8, complex), 10.0, np.random.default_rng(0))


class TestSampleRng:
    def test_reproducible_streams(self):
        a = sample_rng(5, 2, -4.0, 77).integers(0, 1 << 30, 16)
        b = sample_rng(5, 2, -4.0, 77).integers(0, 1 << 30, 16)
        assert np.array_equal(a, b)

    def test_distinct_keys_distinct_streams(self):
        base = sample_rng(5, 2, -4.0, 77).integers(0, 1 << 30, 16)
        for args in ((6, 2, -4.0, 77), (5, 3, -4.0, 77),
                     (5, 2, -4.5, 77), (5, 2, -4.0, 78)):
            assert not np.array_equal(base,
                                      sample_rng(*args).integers(0, 1 << 30, 16))

    def test_key_range_validation(self):
        with pytest.raises(ValueError):
            sample_rng(0, 300, 0.0, 0)
        with pytest.raises(ValueError):
            sample_rng(0, 0, 0.0, 1 << 24)


class TestGenerate:
    def _spec(self, **kw):
        base = dict(schemes=("bpsk", "qpsk"), lengths=(128,), snrs=(0.0, 10.0),
                    per_cell=3, seed=1)
        base.update(kw)
        return DatasetSpec(**base)

    def test_grid_counts_and_labels(self):
        ds = generate(self._spec())
        assert isinstance(ds, Dataset)
        assert ds.iq.shape == (12, 2, 128) and ds.iq.dtype == np.float32
        assert ds.class_names == ["bpsk", "qpsk"]
        for cls in (0, 1):
            for snr in (0.0, 10.0):
                assert ((ds.labels == cls) & (ds.snr_db == snr)).sum() == 3

    def test_bitwise_deterministic(self):
        assert generate(self._spec()) == generate(self._spec())

    def test_rows_keyed_by_identity_not_position(self):
        # growing the grid must not disturb rows already in it
        small = generate(self._spec(schemes=("qpsk",), per_cell=2))
        big = generate(self._spec(schemes=("bpsk", "qpsk"), per_cell=4))
        for snr in (0.0, 10.0):
            a = small.iq[(small.labels == 0) & (small.snr_db == snr)]
            b = big.iq[(big.labels == 1) & (big.snr_db == snr)][:2]
            assert np.array_equal(a, b)

    def test_noise_level_in_rows(self):
        # rebuild each row's clean waveform from its rng key; the residual
        # against the stored row must sit at the requested SNR
        snr = -10.0
        spec = self._spec(schemes=("qpsk",), lengths=(1024,), snrs=(snr,),
                          per_cell=50, seed=3)
        ds = generate(spec)
        n_sym = -(-1024 // spec.sps) + spec.span
        sig_power = noise_power = 0.0
        for i in range(50):
            rng = sample_rng(3, SCHEMES.index("qpsk"), snr, i)
            sym = rng.integers(0, 4, n_sym)
            wave = modulate(sym, "qpsk", spec.channel(snr), 1024)
            wave = wave * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi))
            stored = ds.iq[i, 0].astype(np.float64) + 1j * ds.iq[i, 1]
            sig_power += np.sum(np.abs(wave) ** 2)
            noise_power += np.sum(np.abs(stored - wave) ** 2)
        measured = 10.0 * np.log10(sig_power / noise_power)
        assert abs(measured - snr) < 0.3

    def test_phase_offset_toggle(self):
        with_phase = generate(self._spec())
        without = generate(self._spec(phase_offset=False))
        assert not np.array_equal(with_phase.iq, without.iq)
        assert np.array_equal(with_phase.labels, without.labels)

    def test_generate_all_covers_lengths(self):
        spec = self._spec(lengths=(128, 256), per_cell=1)
        out = generate_all(spec)
        assert set(out) == {128, 256}
        assert out[128].iq.shape[2] == 128 and out[256].iq.shape[2] == 256
        with pytest.raises(ValueError):
            generate(spec)  # several lengths, none chosen

    def test_length_must_be_in_spec(self):
        with pytest.raises(ValueError):
            generate(self._spec(), length=256)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            self._spec(schemes=("am",))
        with pytest.raises(ValueError):
            self._spec(lengths=(100,))
        with pytest.raises(ValueError):
            self._spec(per_cell=0)
        with pytest.raises(ValueError):
            self._spec(rolloff=0.0)
        with pytest.raises(ValueError):
            self._spec(pulse="sinc")

    def test_scheme_names_normalized(self):
        spec = self._spec(schemes=("QPSK", "Bpsk"))
        assert spec.schemes == ("qpsk", "bpsk")

    def test_allowed_lengths_pinned(self):
        assert ALLOWED_LENGTHS == (128, 256, 512, 1024, 2048, 4096)
        assert SCHEMES[:2] == ("bpsk", "qpsk")  # ids are append-only
