"""Complex-baseband synthesis for ten modulation schemes, plus AWGN.

All schemes emit unit-average-power signals of 1024 samples at a nominal
200 kHz sample rate. Linear schemes use 8 samples per symbol with
rectangular pulses (128 symbols per signal); the continuous-phase schemes
(CPFSK, GFSK, GMSK) integrate a frequency pulse so the envelope stays
constant, and GMSK is generated at its native 8196-sample length before
decimation to 1024.

Everything is a pure function of (scheme, seed): the same inputs always
reproduce the same samples bit-for-bit, which the dataset manifest and the
pairing of noisy/clean images rely on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import derive

# Canonical class order; a sample's integer label is its scheme's index here.
SCHEMES = ("4ASK", "4PAM", "8ASK", "16PAM", "CPFSK", "DQPSK", "GFSK", "GMSK", "OOK", "OQPSK")

SAMPLE_RATE = 200_000.0
SIGNAL_LENGTH = 1024
SAMPLES_PER_SYMBOL = 8
GMSK_NATIVE_LENGTH = 8196


class SchemeError(ValueError):
    """Unknown modulation scheme name."""


@dataclass(frozen=True)
class IQSignal:
    """A complex baseband sequence tagged with how it was made."""

    samples: np.ndarray  # complex128
    sample_rate: float
    scheme: str
    seed: int
    snr_db: float | None = None  # None = clean (no noise applied)

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.complex128))

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


@dataclass(frozen=True)
class SchemeParams:
    """Waveform knobs for one scheme (unit-energy alphabet or CPM settings)."""

    kind: str  # "linear" or "cpm"
    sps: int = SAMPLES_PER_SYMBOL
    alphabet: tuple[complex, ...] | None = None  # linear schemes
    mod_index: float | None = None  # CPM schemes
    bt: float | None = None  # Gaussian pulse bandwidth-time product; None = rectangular
    native_length: int | None = None  # generate at this length, then decimate
    differential: bool = False  # DQPSK phase accumulation
    offset_q: bool = False  # OQPSK half-symbol Q delay


def _unit_energy(levels) -> tuple[complex, ...]:
    arr = np.asarray(levels, dtype=np.complex128)
    return tuple(arr / np.sqrt(np.mean(np.abs(arr) ** 2)))


_QPSK_POINTS = tuple(np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4))))

SCHEME_PARAMS: dict[str, SchemeParams] = {
    # Bipolar amplitude shift keying.
    "4ASK": SchemeParams("linear", alphabet=_unit_energy([-3, -1, 1, 3])),
    "8ASK": SchemeParams("linear", alphabet=_unit_energy([-7, -5, -3, -1, 1, 3, 5, 7])),
    # Unipolar pulse amplitude modulation (distinguishes PAM from ASK here).
    "4PAM": SchemeParams("linear", alphabet=_unit_energy([0, 1, 2, 3])),
    "16PAM": SchemeParams("linear", alphabet=_unit_energy(list(range(16)))),
    "OOK": SchemeParams("linear", alphabet=_unit_energy([0, 1])),
    "DQPSK": SchemeParams("linear", alphabet=None, differential=True),
    "OQPSK": SchemeParams("linear", alphabet=_QPSK_POINTS, offset_q=True),
    # Continuous-phase schemes: binary, constant envelope.
    "CPFSK": SchemeParams("cpm", mod_index=0.5, bt=None),
    "GFSK": SchemeParams("cpm", mod_index=1.0, bt=0.35),
    "GMSK": SchemeParams("cpm", mod_index=0.5, bt=0.35, native_length=GMSK_NATIVE_LENGTH),
}


def scheme_index(scheme: str) -> int:
    try:
        return SCHEMES.index(scheme)
    except ValueError:
        raise SchemeError(f"unknown scheme '{scheme}'; expected one of {SCHEMES}") from None


# ---------------------------------------------------------------------------
# waveform builders


def _linear_waveform(params: SchemeParams, n_out: int, rng: np.random.Generator) -> np.ndarray:
    sps = params.sps
    n_sym = -(-n_out // sps)  # ceil
    if params.differential:
        # Phase steps of k*pi/2 accumulated from a 0 reference phase.
        steps = rng.integers(0, 4, size=n_sym)
        phases = np.cumsum(steps) * (np.pi / 2.0)
        symbols = np.exp(1j * phases)
        return np.repeat(symbols, sps)[:n_out]
    if params.offset_q:
        # Independent I/Q bit streams; Q lags by half a symbol.
        half = sps // 2
        scale = 1.0 / np.sqrt(2.0)
        i_bits = rng.choice([-scale, scale], size=n_sym)
        q_bits = rng.choice([-scale, scale], size=n_sym + 1)
        i_wave = np.repeat(i_bits, sps)[:n_out]
        q_full = np.repeat(q_bits, sps)
        q_wave = q_full[sps - half : sps - half + n_out]
        return i_wave + 1j * q_wave
    alphabet = np.asarray(params.alphabet, dtype=np.complex128)
    symbols = alphabet[rng.integers(0, len(alphabet), size=n_sym)]
    return np.repeat(symbols, sps)[:n_out]


def _gaussian_freq_pulse(bt: float, sps: int, span: int = 4) -> np.ndarray:
    """Gaussian-filtered rectangular frequency pulse, normalized to unit sum."""
    t = np.arange(-span * sps, span * sps + 1, dtype=np.float64) / sps
    gauss = np.exp(-2.0 * np.pi**2 * bt**2 * t**2 / np.log(2.0))
    g = np.convolve(gauss, np.ones(sps))
    return g / g.sum()


def _cpm_waveform(params: SchemeParams, n_out: int, rng: np.random.Generator) -> np.ndarray:
    sps = params.sps
    if params.bt is None:
        pulse = np.ones(sps) / sps
        span = 0
    else:
        pulse = _gaussian_freq_pulse(params.bt, sps)
        span = 4
    n_sym = -(-n_out // sps) + 2 * span
    bits = rng.choice([-1.0, 1.0], size=n_sym)
    impulses = np.zeros(n_sym * sps)
    impulses[::sps] = bits
    # Per-sample phase increment; each symbol contributes pi*h*a_k in total
    # because the pulse sums to 1.
    dphi = np.pi * params.mod_index * np.convolve(impulses, pulse)
    phase = np.cumsum(dphi)
    return np.exp(1j * phase[:n_out])


def gen_clean(scheme: str, n_samples: int = SIGNAL_LENGTH, seed: int = 0) -> IQSignal:
    """Deterministic unit-power clean signal for one scheme.

    Schemes with a longer native length (GMSK) are synthesized there and
    then decimated down to `n_samples`.
    """
    scheme_index(scheme)
    params = SCHEME_PARAMS[scheme]
    native = params.native_length or n_samples
    if native < n_samples:
        native = n_samples
    rng = derive(seed, "symbols", scheme)
    if params.kind == "linear":
        samples = _linear_waveform(params, native, rng)
    else:
        samples = _cpm_waveform(params, native, rng)
    if native != n_samples:
        samples = _resample_array(samples, n_samples)
    rms = np.sqrt(np.mean(np.abs(samples) ** 2))
    samples = samples / rms
    return IQSignal(samples=samples, sample_rate=SAMPLE_RATE, scheme=scheme, seed=seed, snr_db=None)


def add_awgn(signal: IQSignal, snr_db: float, seed: int) -> IQSignal:
    """Additive white Gaussian noise at the requested SNR.

    Noise power is P_signal * 10^(-snr_db/10), split equally between the
    real and imaginary components, i.i.d. across samples. `snr_db = inf`
    degenerates to zero noise (the samples pass through bit-exactly).
    """
    power = signal.power
    if power <= 0:
        raise ValueError("cannot set an SNR against a zero-power signal")
    noise_var = power * 10.0 ** (-float(snr_db) / 10.0)
    rng = derive(seed, "awgn")
    scale = np.sqrt(noise_var / 2.0)
    noise = scale * (rng.standard_normal(len(signal.samples)) + 1j * rng.standard_normal(len(signal.samples)))
    return IQSignal(
        samples=signal.samples + noise,
        sample_rate=signal.sample_rate,
        scheme=signal.scheme,
        seed=signal.seed,
        snr_db=float(snr_db),
    )


def _resample_array(samples: np.ndarray, target_len: int) -> np.ndarray:
    n = len(samples)
    if target_len == n:
        return samples.copy()
    if target_len < n:
        # Index decimation keeps actual samples (preserving any constant
        # envelope) and hits both endpoints exactly.
        idx = np.rint(np.linspace(0, n - 1, target_len)).astype(np.intp)
        return samples[idx]
    pos = np.linspace(0, n - 1, target_len)
    base = np.arange(n)
    return np.interp(pos, base, samples.real) + 1j * np.interp(pos, base, samples.imag)


def resample(signal: IQSignal, target_len: int) -> IQSignal:
    """Uniform decimation (shorter) or linear interpolation (longer)."""
    if target_len < 2:
        raise ValueError("target_len must be >= 2")
    return IQSignal(
        samples=_resample_array(signal.samples, target_len),
        sample_rate=signal.sample_rate * target_len / len(signal.samples),
        scheme=signal.scheme,
        seed=signal.seed,
        snr_db=signal.snr_db,
    )


# ---------------------------------------------------------------------------
# raw IQ export


def save_iq(path: str | Path, signal: IQSignal) -> None:
    """Interleaved float32 little-endian I/Q plus a JSON sidecar."""
    path = Path(path)
    interleaved = np.empty(2 * len(signal.samples), dtype="<f4")
    interleaved[0::2] = signal.samples.real
    interleaved[1::2] = signal.samples.imag
    path.write_bytes(interleaved.tobytes())
    sidecar = {
        "scheme": signal.scheme,
        "snr_db": signal.snr_db,
        "seed": signal.seed,
        "length": len(signal.samples),
        "sample_rate": signal.sample_rate,
    }
    path.with_name(path.name + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_iq(path: str | Path) -> IQSignal:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    flat = np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64)
    samples = flat[0::2] + 1j * flat[1::2]
    if len(samples) != meta["length"]:
        raise ValueError(f"payload holds {len(samples)} samples, sidecar says {meta['length']}")
    return IQSignal(
        samples=samples,
        sample_rate=meta["sample_rate"],
        scheme=meta["scheme"],
        seed=meta["seed"],
        snr_db=meta["snr_db"],
    )
