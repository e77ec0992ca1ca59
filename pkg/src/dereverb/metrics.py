"""Intrusive speech-quality metrics: CD, LLR, FWSegSNR.

Common analysis: 32 ms Hann frames with 8 ms hop, LPC order 12 via
autocorrelation + Levinson-Durbin (R[0] regularized by 1e-10*R[0]).  Frames
whose reference energy falls more than 40 dB below the loudest reference
frame are excluded from every metric, so silence padding does not shift
scores.  These are trend metrics: constants are stated here, not tuned to
any external toolkit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError
from .signal import WaveForm, read_wav

LPC_ORDER = 12
ENERGY_GATE_DB = 40.0
FWSEG_BANDS = 23
FWSEG_CLAMP = (-10.0, 35.0)
FWSEG_WEIGHT_EXP = 0.2
LLR_KEEP_FRACTION = 0.95


def _frame_pair(ref: WaveForm, test: WaveForm):
    """Windowed, energy-gated frame pairs (ref_frames, test_frames)."""
    if ref.sample_rate != test.sample_rate:
        raise ContractError(
            f"sample rates differ: {ref.sample_rate} vs {test.sample_rate}"
        )
    fs = ref.sample_rate
    frame = int(round(0.032 * fs))
    hop = int(round(0.008 * fs))
    n = min(len(ref), len(test))
    if n < frame:
        raise ContractError(f"signals shorter than one 32 ms frame ({frame} samples)")
    num = (n - frame) // hop + 1
    win = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(frame) / frame)
    idx = np.arange(frame)[None, :] + hop * np.arange(num)[:, None]
    fr = ref.samples[:n][idx] * win
    ft = test.samples[:n][idx] * win
    energy = np.sum(fr * fr, axis=1)
    peak = energy.max()
    if peak <= 0.0:
        raise ContractError("reference signal is silent; metrics undefined")
    keep = energy >= peak * 10.0 ** (-ENERGY_GATE_DB / 10.0)
    if not keep.any():
        raise ContractError("no reference frames above the energy gate")
    return fr[keep], ft[keep]


def _autocorr(frame, order):
    n = frame.size
    r = np.empty(order + 1)
    for k in range(order + 1):
        r[k] = np.dot(frame[: n - k], frame[k:])
    r[0] *= 1.0 + 1e-10
    return r


def _levinson(r, order):
    """Predictor coefficients a (s[n] ~ sum a_k s[n-k]); None if degenerate."""
    if r[0] <= 0.0:
        return None
    a = np.zeros(order)
    e = r[0]
    for i in range(order):
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        k = acc / e
        a_next = a.copy()
        a_next[i] = k
        if i:
            a_next[:i] = a[:i] - k * a[i - 1 :: -1]
        a = a_next
        e *= 1.0 - k * k
        if e <= 0.0:
            return None
    return a


def _lpc_cepstrum(a):
    """Minimum-phase cepstrum c_1..c_p of the all-pole model 1/A(z)."""
    p = a.size
    c = np.zeros(p)
    for n in range(1, p + 1):
        acc = a[n - 1]
        for k in range(1, n):
            acc += (k / n) * c[k - 1] * a[n - k - 1]
        c[n - 1] = acc
    return c


def cepstral_distance(ref: WaveForm, test: WaveForm) -> float:
    """Mean LPC-cepstral distance in dB over energy-gated frames (lower = better)."""
    fr, ft = _frame_pair(ref, test)
    scale = 10.0 / math.log(10.0)
    values = []
    for i in range(fr.shape[0]):
        a_ref = _levinson(_autocorr(fr[i], LPC_ORDER), LPC_ORDER)
        a_test = _levinson(_autocorr(ft[i], LPC_ORDER), LPC_ORDER)
        if a_ref is None or a_test is None:
            continue
        d = _lpc_cepstrum(a_ref) - _lpc_cepstrum(a_test)
        values.append(scale * math.sqrt(2.0 * np.dot(d, d)))
    if not values:
        raise ContractError("no valid frames for cepstral distance")
    return float(np.mean(values))


def llr(ref: WaveForm, test: WaveForm, return_skipped=False):
    """Log-likelihood ratio: mean of the smallest 95% of frame values.

    Frames whose autocorrelation is not positive definite after
    regularization are skipped; pass ``return_skipped=True`` to get
    ``(value, skipped_count)``.
    """
    fr, ft = _frame_pair(ref, test)
    values = []
    skipped = 0
    for i in range(fr.shape[0]):
        r_ref = _autocorr(fr[i], LPC_ORDER)
        a_ref = _levinson(r_ref, LPC_ORDER)
        a_test = _levinson(_autocorr(ft[i], LPC_ORDER), LPC_ORDER)
        if a_ref is None or a_test is None:
            skipped += 1
            continue
        # error-filter rows [1, -a_1, ..., -a_p] against the reference autocorrelation
        va = np.concatenate(([1.0], -a_ref))
        vb = np.concatenate(([1.0], -a_test))
        lags = np.abs(np.arange(LPC_ORDER + 1)[:, None] - np.arange(LPC_ORDER + 1)[None, :])
        r_mat = r_ref[lags]
        num = vb @ r_mat @ vb
        den = va @ r_mat @ va
        if num <= 0.0 or den <= 0.0:
            skipped += 1
            continue
        values.append(max(0.0, math.log(num / den)))
    if not values:
        raise ContractError(f"no valid frames for LLR ({skipped} skipped)")
    values.sort()
    keep = max(1, round(len(values) * LLR_KEEP_FRACTION))
    result = float(np.mean(values[:keep]))
    return (result, skipped) if return_skipped else result


def _mel_filterbank(n_bands, nfft, fs):
    mel = lambda f: 2595.0 * np.log10(1.0 + f / 700.0)
    imel = lambda m: 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    edges = imel(np.linspace(mel(0.0), mel(fs / 2.0), n_bands + 2))
    freqs = np.arange(nfft // 2 + 1) * fs / nfft
    bank = np.zeros((n_bands, freqs.size))
    for b in range(n_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        rise = (freqs - lo) / max(mid - lo, 1e-12)
        fall = (hi - freqs) / max(hi - mid, 1e-12)
        bank[b] = np.clip(np.minimum(rise, fall), 0.0, None)
    return bank


def fwsegsnr(ref: WaveForm, test: WaveForm) -> float:
    """Frequency-weighted segmental SNR in dB (higher = better).

    Per frame and mel band: 10 log10(E_ref / max(E_diff, floor)) weighted by
    the band reference magnitude to the 0.2 power; frame values are clamped
    to [-10, 35] dB and averaged over energy-gated frames.
    """
    fr, ft = _frame_pair(ref, test)
    fs = ref.sample_rate
    frame = fr.shape[1]
    nfft = 1 << (frame - 1).bit_length()
    bank = _mel_filterbank(FWSEG_BANDS, nfft, fs)
    lo, hi = FWSEG_CLAMP
    values = []
    for i in range(fr.shape[0]):
        spec_ref = np.abs(np.fft.rfft(fr[i], nfft)) ** 2
        spec_diff = np.abs(np.fft.rfft(fr[i] - ft[i], nfft)) ** 2
        e_ref = bank @ spec_ref
        e_diff = bank @ spec_diff
        weights = np.sqrt(np.maximum(e_ref, 0.0)) ** FWSEG_WEIGHT_EXP
        wsum = weights.sum()
        if wsum <= 0.0:
            continue
        snr = 10.0 * np.log10(np.maximum(e_ref, 1e-20) / np.maximum(e_diff, 1e-20))
        values.append(min(hi, max(lo, float(np.dot(weights, snr) / wsum))))
    if not values:
        raise ContractError("no valid frames for FWSegSNR")
    return float(np.mean(values))


@dataclass
class MetricReport:
    """Per-utterance metric rows plus corpus means."""

    rows: list = field(default_factory=list)  # (utt_id, cd, llr, fwsegsnr)

    def add(self, utt_id, cd_val, llr_val, fw_val):
        self.rows.append((utt_id, cd_val, llr_val, fw_val))

    def means(self):
        arr = np.array([[r[1], r[2], r[3]] for r in self.rows])
        return tuple(float(v) for v in arr.mean(axis=0))

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("utt_id,cd,llr,fwsegsnr\n")
            for utt, c, l, f in self.rows:
                fh.write(f"{utt},{c!r},{l!r},{f!r}\n")
            mc, ml, mf = self.means()
            fh.write(f"MEAN,{mc!r},{ml!r},{mf!r}\n")


def evaluate_pair(ref: WaveForm, test: WaveForm):
    """All three metrics for one reference/test pair."""
    return {
        "cd": cepstral_distance(ref, test),
        "llr": llr(ref, test),
        "fwsegsnr": fwsegsnr(ref, test),
    }


def evaluate_dirs(ref_dir, test_dir) -> MetricReport:
    """Match WAVs by filename across two directories and score each pair."""
    ref_dir, test_dir = Path(ref_dir), Path(test_dir)
    refs = sorted(p.name for p in ref_dir.glob("*.wav"))
    if not refs:
        raise DataError(f"no WAV files in {ref_dir}")
    report = MetricReport()
    for name in refs:
        test_path = test_dir / name
        if not test_path.exists():
            raise DataError(f"missing test file for {name!r} in {test_dir}")
        ref = read_wav(ref_dir / name)
        test = read_wav(test_path, expected_rate=ref.sample_rate)
        scores = evaluate_pair(ref, test)
        report.add(Path(name).stem, scores["cd"], scores["llr"], scores["fwsegsnr"])
    return report
