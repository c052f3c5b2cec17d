"""Waveform synthesis: power normalization, per-scheme structure, AWGN
statistics, resampling, and the raw export round-trip."""

import numpy as np
import pytest

from dmae.signals import (
    SCHEMES,
    SIGNAL_LENGTH,
    IQSignal,
    SchemeError,
    add_awgn,
    gen_clean,
    load_iq,
    resample,
    save_iq,
    scheme_index,
)


class TestCleanSignals:
    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_length_and_unit_power(self, scheme):
        sig = gen_clean(scheme, seed=3)
        assert len(sig.samples) == 1024
        assert sig.samples.dtype == np.complex128
        assert sig.power == pytest.approx(1.0, abs=1e-6)
        assert sig.snr_db is None

    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_seed_determinism(self, scheme):
        a = gen_clean(scheme, seed=42)
        b = gen_clean(scheme, seed=42)
        c = gen_clean(scheme, seed=43)
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, c.samples)

    def test_unknown_scheme_rejected(self):
        with pytest.raises(SchemeError):
            gen_clean("QAM64", seed=0)
        with pytest.raises(SchemeError):
            scheme_index("BPSK")

    def test_scheme_indices_canonical(self):
        assert scheme_index("4ASK") == 0
        assert scheme_index("CPFSK") == 4
        assert scheme_index("OQPSK") == 9
        assert len(SCHEMES) == 10

    def test_4ask_levels(self):
        sig = gen_clean("4ASK", seed=7)
        levels = np.unique(np.round(sig.samples.real, 12))
        assert len(levels) == 4
        assert np.allclose(sig.samples.imag, 0.0)
        # levels sit at {+-1, +-3} * c with c near 1/sqrt(5)
        c = levels[-1] / 3.0
        assert np.allclose(levels, np.array([-3, -1, 1, 3]) * c, atol=1e-12)
        assert c == pytest.approx(1 / np.sqrt(5), rel=0.15)
        assert np.mean(np.abs(sig.samples) ** 2) == pytest.approx(1.0, abs=1e-6)

    def test_8ask_levels(self):
        sig = gen_clean("8ASK", seed=11)
        levels = np.unique(np.round(sig.samples.real, 12))
        assert len(levels) == 8
        c = levels[-1] / 7.0
        assert np.allclose(levels, np.array([-7, -5, -3, -1, 1, 3, 5, 7]) * c, atol=1e-12)

    def test_pam_is_unipolar(self):
        for scheme, m in (("4PAM", 4), ("16PAM", 16)):
            sig = gen_clean(scheme, seed=5)
            assert np.allclose(sig.samples.imag, 0.0)
            assert sig.samples.real.min() >= -1e-12
            levels = np.unique(np.round(sig.samples.real, 10))
            assert len(levels) == m
            assert levels[0] == pytest.approx(0.0, abs=1e-12)
            # evenly spaced grid
            gaps = np.diff(levels)
            assert np.allclose(gaps, gaps[0], atol=1e-10)

    def test_ook_two_levels(self):
        sig = gen_clean("OOK", seed=9)
        levels = np.unique(np.round(np.abs(sig.samples), 10))
        assert len(levels) == 2
        assert levels[0] == pytest.approx(0.0, abs=1e-12)
        assert levels[1] > 0

    @pytest.mark.parametrize("scheme", ["CPFSK", "GFSK", "GMSK"])
    def test_constant_envelope(self, scheme):
        sig = gen_clean(scheme, seed=13)
        mags = np.abs(sig.samples)
        assert np.all(np.abs(mags - 1.0) < 1e-6)

    def test_cpfsk_phase_steps(self):
        # h=0.5 at 8 samples/symbol: every per-sample phase increment is
        # exactly +-pi/16 (rectangular frequency pulse, no ISI).
        sig = gen_clean("CPFSK", seed=17)
        dphi = np.angle(sig.samples[1:] * np.conj(sig.samples[:-1]))
        assert np.all(np.abs(np.abs(dphi) - np.pi / 16) < 1e-9)

    def test_gmsk_comes_from_native_8196(self):
        # decimation indices of round(linspace(0, 8195, 1024)) include both ends
        sig = gen_clean("GMSK", seed=19)
        assert len(sig.samples) == 1024
        from dmae.signals import SCHEME_PARAMS, _cpm_waveform
        from dmae.seeding import derive

        native = _cpm_waveform(SCHEME_PARAMS["GMSK"], 8196, derive(19, "symbols", "GMSK"))
        idx = np.rint(np.linspace(0, 8195, 1024)).astype(int)
        expect = native[idx]
        expect = expect / np.sqrt(np.mean(np.abs(expect) ** 2))
        assert np.allclose(sig.samples, expect, atol=1e-12)

    def test_gmsk_phase_smoother_than_gfsk_is_slower(self):
        # mod index 1.0 (GFSK) accrues twice the phase per symbol of GMSK
        gfsk = gen_clean("GFSK", seed=23)
        gmsk_native = gen_clean("GMSK", n_samples=8196, seed=23)
        tot_gfsk = np.abs(np.diff(np.unwrap(np.angle(gfsk.samples)))).sum() / len(gfsk.samples)
        tot_gmsk = np.abs(np.diff(np.unwrap(np.angle(gmsk_native.samples)))).sum() / 8196
        assert tot_gfsk > 1.5 * tot_gmsk

    def test_dqpsk_on_axes(self):
        sig = gen_clean("DQPSK", seed=29)
        angles = np.angle(sig.samples)
        # all sample phases on the pi/2 grid
        snapped = np.round(angles / (np.pi / 2))
        assert np.allclose(angles, snapped * np.pi / 2, atol=1e-9)
        assert np.all(np.abs(np.abs(sig.samples) - 1.0) < 1e-9)

    def test_oqpsk_staggered_transitions(self):
        sig = gen_clean("OQPSK", seed=31)
        # four corner points only
        assert np.allclose(np.abs(sig.samples.real), np.abs(sig.samples.real[0]), atol=1e-9)
        assert np.allclose(np.abs(sig.samples.imag), np.abs(sig.samples.imag[0]), atol=1e-9)
        i_jumps = np.nonzero(np.abs(np.diff(sig.samples.real)) > 1e-9)[0] + 1
        q_jumps = np.nonzero(np.abs(np.diff(sig.samples.imag)) > 1e-9)[0] + 1
        assert np.all(i_jumps % 8 == 0)
        assert np.all(q_jumps % 8 == 4)


class TestAWGN:
    def test_zero_db_noise_power_equals_signal_power(self):
        sig = gen_clean("4ASK", seed=1)
        noisy = add_awgn(sig, 0.0, seed=2)
        noise = noisy.samples - sig.samples
        # one long draw for a tight estimate
        long_sig = IQSignal(np.ones(100_000, dtype=np.complex128), 1.0, "OOK", 0)
        long_noisy = add_awgn(long_sig, 0.0, seed=2)
        noise_l = long_noisy.samples - long_sig.samples
        assert np.mean(np.abs(noise_l) ** 2) == pytest.approx(1.0, rel=0.02)
        assert noise.shape == sig.samples.shape

    def test_empirical_snr_within_tenth_db(self):
        n = 100_000
        sig = IQSignal(np.full(n, 1.0 + 0.0j), 1.0, "OOK", 0)
        for snr in (-10.0, 0.0, 10.0):
            noisy = add_awgn(sig, snr, seed=5)
            noise = noisy.samples - sig.samples
            measured = 10 * np.log10(1.0 / np.mean(np.abs(noise) ** 2))
            assert abs(measured - snr) < 0.1

    def test_snr_10db_unit_power_gives_var_tenth(self):
        n = 200_000
        sig = IQSignal(np.full(n, 1.0 + 0.0j), 1.0, "OOK", 0)
        noisy = add_awgn(sig, 10.0, seed=6)
        noise = noisy.samples - sig.samples
        assert np.mean(np.abs(noise) ** 2) == pytest.approx(0.1, rel=0.02)
        # split equally between I and Q
        assert np.var(noise.real) == pytest.approx(0.05, rel=0.03)
        assert np.var(noise.imag) == pytest.approx(0.05, rel=0.03)

    def test_noise_is_white(self):
        n = 100_000
        sig = IQSignal(np.zeros(n, dtype=np.complex128) + 1.0, 1.0, "OOK", 0)
        noise = add_awgn(sig, 0.0, seed=7).samples - 1.0
        x = noise.real - noise.real.mean()
        for lag in (1, 2, 5):
            rho = np.dot(x[:-lag], x[lag:]) / np.dot(x, x)
            assert abs(rho) < 0.02

    def test_infinite_snr_passthrough(self):
        sig = gen_clean("GMSK", seed=3)
        noisy = add_awgn(sig, np.inf, seed=4)
        assert np.array_equal(noisy.samples, sig.samples)

    def test_determinism(self):
        sig = gen_clean("OOK", seed=8)
        a = add_awgn(sig, -5.0, seed=99)
        b = add_awgn(sig, -5.0, seed=99)
        c = add_awgn(sig, -5.0, seed=100)
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, c.samples)

    def test_zero_power_rejected(self):
        sig = IQSignal(np.zeros(16, dtype=np.complex128), 1.0, "OOK", 0)
        with pytest.raises(ValueError):
            add_awgn(sig, 0.0, seed=0)


class TestResample:
    def test_identity(self):
        sig = gen_clean("4ASK", seed=2)
        out = resample(sig, len(sig.samples))
        assert np.array_equal(out.samples, sig.samples)

    def test_8196_to_1024_preserves_endpoints_and_envelope(self):
        sig = gen_clean("GMSK", n_samples=8196, seed=12)
        out = resample(sig, 1024)
        assert len(out.samples) == 1024
        assert out.samples[0] == sig.samples[0]
        assert out.samples[-1] == sig.samples[-1]
        assert np.all(np.abs(np.abs(out.samples) - 1.0) < 1e-6)

    def test_constant_resamples_to_constant(self):
        sig = IQSignal(np.full(100, 2.0 + 1.0j), 1.0, "OOK", 0)
        for target in (10, 100, 400):
            out = resample(sig, target)
            assert np.allclose(out.samples, 2.0 + 1.0j)

    def test_upsample_linear_endpoints(self):
        ramp = np.arange(8, dtype=np.float64) + 0j
        sig = IQSignal(ramp, 1.0, "OOK", 0)
        out = resample(sig, 29)
        assert out.samples[0] == 0
        assert out.samples[-1] == 7
        # a linear ramp stays linear under linear interpolation
        assert np.allclose(out.samples.real, np.linspace(0, 7, 29), atol=1e-12)

    def test_too_short_target_rejected(self):
        sig = gen_clean("OOK", seed=1)
        with pytest.raises(ValueError):
            resample(sig, 1)


class TestIQExport:
    def test_roundtrip(self, tmp_path):
        sig = add_awgn(gen_clean("DQPSK", seed=21), 5.0, seed=22)
        path = tmp_path / "sig.iq"
        save_iq(path, sig)
        loaded = load_iq(path)
        assert loaded.scheme == "DQPSK"
        assert loaded.snr_db == 5.0
        assert loaded.seed == 21
        assert loaded.sample_rate == sig.sample_rate
        # float32 storage: exact to f32 precision
        assert np.allclose(loaded.samples, sig.samples, atol=1e-6)

    def test_layout_is_interleaved_f32_le(self, tmp_path):
        sig = IQSignal(np.array([1.0 + 2.0j, -3.0 + 4.0j]), 1.0, "OOK", 0)
        path = tmp_path / "two.iq"
        save_iq(path, sig)
        raw = np.frombuffer(path.read_bytes(), dtype="<f4")
        assert np.array_equal(raw, np.array([1, 2, -3, 4], dtype="<f4"))
        sidecar = (tmp_path / "two.iq.json").read_text()
        assert '"scheme": "OOK"' in sidecar
