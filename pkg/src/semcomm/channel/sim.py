"""BPSK over a Rayleigh-fading AWGN channel, ``y = h x + n``.

Randomness comes from numpy's PCG64 generator; Gaussian draws use its
ziggurat ``standard_normal``.  Noise is drawn as interleaved (re, im) pairs in
symbol order, so the realization does not depend on internal chunking.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autodiff.tensor import Tensor
from ..errors import ContractError, StatisticsError

SNR_CAP_DB = 200.0
MIN_SNR_SYMBOLS = 10_000
_CHUNK = 1 << 20


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float = 10.0
    fading: bool = True
    seed: int = 0
    per_symbol_fading: bool = False  # otherwise one gain per transmission (block fading)

    @property
    def noise_var(self) -> float:
        """Complex noise power for unit-energy symbols; zero for an infinite SNR."""
        if math.isinf(self.snr_db) and self.snr_db > 0:
            return 0.0
        return 10.0 ** (-self.snr_db / 10.0)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass
class SymbolLog:
    sent: np.ndarray  # +-1
    h: np.ndarray  # complex gain per symbol
    noise: np.ndarray  # complex
    equalized: np.ndarray  # complex y / h
    decided: np.ndarray  # bits

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "sent", "h_re", "h_im", "n_re", "n_im", "decided"])
            for i in range(len(self.sent)):
                w.writerow([i, int(self.sent[i]), repr(float(self.h[i].real)), repr(float(self.h[i].imag)),
                            repr(float(self.noise[i].real)), repr(float(self.noise[i].imag)),
                            int(self.decided[i])])


@dataclass
class ChannelResult:
    bits: np.ndarray
    log: SymbolLog | None


def bits_from_bytes(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))


def bytes_from_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def rayleigh_gains(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` unit-power gains ``(a + ib) / sqrt(2)`` with ``a, b`` standard normal."""
    z = rng.standard_normal((n, 2))
    return (z[:, 0] + 1j * z[:, 1]) / math.sqrt(2.0)


def _complex_noise(rng: np.random.Generator, n: int, var: float) -> np.ndarray:
    z = rng.standard_normal((n, 2)) * math.sqrt(var / 2.0)
    return z[:, 0] + 1j * z[:, 1]


def apply_channel(bits, config: ChannelConfig, rng: np.random.Generator | None = None,
                  log: bool = False) -> ChannelResult:
    """Send ``bits`` as BPSK symbols and return the hard decisions after ``y / h``.

    With ``log=True`` every symbol is recorded; leave it off for long streams.
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size == 0:
        raise ContractError("cannot transmit an empty bit stream")
    if np.any(bits > 1):
        raise ContractError("bit stream must contain only 0 and 1")
    rng = config.rng() if rng is None else rng
    n = bits.size
    var = config.noise_var
    block_h = rayleigh_gains(rng, 1)[0] if config.fading and not config.per_symbol_fading else 1.0 + 0j
    decided = np.empty(n, dtype=np.uint8)
    parts = {"h": [], "noise": [], "eq": []} if log else None
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        x = 2.0 * bits[lo:hi] - 1.0
        h = rayleigh_gains(rng, hi - lo) if config.fading and config.per_symbol_fading \
            else np.full(hi - lo, block_h)
        noise = _complex_noise(rng, hi - lo, var) if var > 0 else np.zeros(hi - lo, complex)
        eq = (h * x + noise) / h
        decided[lo:hi] = eq.real > 0
        if log:
            parts["h"].append(h)
            parts["noise"].append(noise)
            parts["eq"].append(eq)
    record = None
    if log:
        record = SymbolLog(2 * bits.astype(np.int8) - 1, np.concatenate(parts["h"]),
                           np.concatenate(parts["noise"]), np.concatenate(parts["eq"]), decided.copy())
    return ChannelResult(decided, record)


def transmit_bytes(data: bytes, config: ChannelConfig, rng: np.random.Generator | None = None,
                   log: bool = False) -> tuple[bytes, SymbolLog | None]:
    res = apply_channel(bits_from_bytes(data), config, rng, log)
    return bytes_from_bits(res.bits), res.log


def bpsk_ber(snr_db: float) -> float:
    """Analytic BPSK bit error rate on AWGN, ``Q(sqrt(2 Es/N0))``."""
    return 0.5 * math.erfc(math.sqrt(10.0 ** (snr_db / 10.0)))


def measure_empirical_snr(sent, received) -> float:
    """``10 log10(signal power / MSE)`` of equalized symbols, capped at 200 dB."""
    sent = np.asarray(sent)
    received = np.asarray(received)
    if sent.shape != received.shape:
        raise ContractError("sent and received symbol counts differ")
    if sent.size < MIN_SNR_SYMBOLS:
        raise StatisticsError(f"need at least {MIN_SNR_SYMBOLS} symbols, got {sent.size}")
    signal = float(np.mean(np.abs(sent) ** 2))
    err = float(np.mean(np.abs(received - sent) ** 2))
    if err == 0.0:
        return SNR_CAP_DB
    return min(SNR_CAP_DB, 10.0 * math.log10(signal / err))


@dataclass
class LayerRealization:
    h: np.ndarray  # real gain per sample, shape [N]
    noise: np.ndarray  # same shape as the input


def draw_layer_realization(shape: tuple[int, ...], config: ChannelConfig, rng: np.random.Generator,
                           signal_power: float) -> LayerRealization:
    """Per-sample real gains ``|h|`` (unit mean power) and elementwise real noise.

    Noise variance is ``signal_power / 10^(snr/10)``; axis 0 indexes samples.
    """
    n = shape[0]
    h = np.abs(rayleigh_gains(rng, n)) if config.fading else np.ones(n)
    var = 0.0 if config.noise_var == 0.0 else signal_power * config.noise_var
    noise = rng.standard_normal(shape) * math.sqrt(var) if var > 0 else np.zeros(shape)
    return LayerRealization(h, noise)


def channel_layer_forward(x: Tensor, config: ChannelConfig, rng: np.random.Generator | None = None,
                          training: bool = True, realization: LayerRealization | None = None) -> Tensor:
    """Differentiable ``y = h * x + n`` on a batched real tensor ``[N, ...]``.

    The gradient with respect to ``x`` is ``h``; the noise is a constant.  Pass a
    fixed ``realization`` to reuse the same draw (e.g. for gradient checks).
    """
    if not training:
        raise ContractError("the channel layer is only defined in training mode")
    if realization is None:
        rng = config.rng() if rng is None else rng
        realization = draw_layer_realization(x.shape, config, rng, float(np.mean(x.data.astype(np.float64) ** 2)))
    dtype = x.data.dtype
    h = Tensor(realization.h.reshape((-1,) + (1,) * (x.ndim - 1)).astype(dtype))
    return x * h + Tensor(realization.noise.astype(dtype))
