"""Beat detection, fiducial measurements and the RVH/RAE rule criteria."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import AxisUndefined, NoBeats, TooShort

REFRACTORY_S = 0.200
MIN_DURATION_S = 2.0

# measurement windows, seconds relative to the R peak
V1_WINDOW_S = 0.060
BASELINE_WINDOW_S = (-0.100, -0.070)
P_WINDOW_S = (-0.260, -0.100)
QRS_SEARCH_S = (-0.100, 0.150)
QRS_ENVELOPE_FRACTION = 0.06
AXIS_FLOOR = 1e-3  # mV*ms


@dataclass(frozen=True)
class Thresholds:
    r_v1_mv: float = 0.7
    rad_deg: float = 90.0
    qrs_ms: float = 120.0
    p_ii_mv: float = 0.25


DEFAULT_THRESHOLDS = Thresholds()


@dataclass
class FiducialSet:
    r_peak_indices: np.ndarray
    r_amp_v1: float
    s_amp_v1: float
    qrs_duration: float
    frontal_axis: float | None
    p_amp_ii: float
    net_qrs_i: float = 0.0
    net_qrs_avf: float = 0.0


@dataclass
class CriteriaResult:
    right_axis_deviation: bool
    tall_narrow_r_v1: bool
    r_gt_s_v1: bool
    rae_flag: bool
    rvh_positive: bool
    warnings: list[str] = field(default_factory=list)

    def flags(self):
        return (self.right_axis_deviation, self.tall_narrow_r_v1, self.r_gt_s_v1,
                self.rae_flag, self.rvh_positive)

    def as_dict(self):
        return {
            "right_axis_deviation": self.right_axis_deviation,
            "tall_narrow_r_v1": self.tall_narrow_r_v1,
            "r_gt_s_v1": self.r_gt_s_v1,
            "rae_flag": self.rae_flag,
            "rvh_positive": self.rvh_positive,
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------------------
# R-peak detection

def _bandpass(x, fs, low=5.0, high=15.0):
    sos = signal.butter(2, [low, high], btype="bandpass", fs=fs, output="sos")
    return signal.sosfiltfilt(sos, x)


def _integrated(x, fs):
    """Band-pass, differentiate, square, centered 150 ms moving-window integrate."""
    filtered = _bandpass(x, fs)
    slope = np.gradient(filtered) * fs
    width = max(1, int(round(0.150 * fs)))
    return np.convolve(slope ** 2, np.ones(width) / width, mode="same")


def detect_r_peaks(lead_signal, sampling_rate) -> np.ndarray:
    """Pan-Tompkins style detector returning strictly increasing R indices."""
    x = np.asarray(lead_signal, dtype=np.float64)
    fs = float(sampling_rate)
    if len(x) < MIN_DURATION_S * fs:
        raise TooShort(f"need at least {MIN_DURATION_S} s of signal, got {len(x) / fs:.3f} s")
    x = x - np.median(x)
    if not np.any(x):
        return np.array([], dtype=np.int64)

    mwi = _integrated(x, fs)
    if mwi.max() <= 0:
        return np.array([], dtype=np.int64)
    refractory = int(round(REFRACTORY_S * fs))
    candidates, _ = signal.find_peaks(mwi, distance=refractory)

    learn = mwi[: int(MIN_DURATION_S * fs)]
    spk = 0.25 * learn.max()
    npk = 0.5 * learn.mean()
    accepted = []
    for idx in candidates:
        peak = mwi[idx]
        threshold = npk + 0.25 * (spk - npk)
        if peak > threshold:
            accepted.append(idx)
            spk = 0.125 * peak + 0.875 * spk
        else:
            npk = 0.125 * peak + 0.875 * npk

    # locate the R peak on the raw lead around each integrator peak
    half = int(round(0.100 * fs))
    located = []
    for idx in accepted:
        lo, hi = max(0, idx - half), min(len(x), idx + half + 1)
        located.append(lo + int(np.argmax(np.abs(x[lo:hi]))))

    peaks = []
    for idx in located:
        if peaks and idx - peaks[-1] < refractory:
            if abs(x[idx]) > abs(x[peaks[-1]]):
                peaks[-1] = idx
            continue
        peaks.append(idx)
    return np.array(peaks, dtype=np.int64)


DETECTION_LEADS = ("II", "V5", "V6", "I")


def detect_record_peaks(record, leads=DETECTION_LEADS):
    """Run the detector on whichever candidate lead has the strongest QRS band energy."""
    best, best_energy = None, -1.0
    for name in leads:
        x = record.lead(name)
        energy = np.percentile(np.abs(_bandpass(x - np.median(x), record.sampling_rate)), 99)
        if energy > best_energy:
            best, best_energy = name, energy
    return detect_r_peaks(record.lead(best), record.sampling_rate)


# ---------------------------------------------------------------------------
# measurements

def _window(center, bounds_s, fs, n):
    lo = center + int(round(bounds_s[0] * fs))
    hi = center + int(round(bounds_s[1] * fs)) + 1
    return max(0, lo), min(n, hi)


def _crossing(env, i_below, i_above, level):
    """Fractional index where ``env`` crosses ``level`` between two neighbours."""
    a, b = env[i_below], env[i_above]
    if a == b:
        return float(i_above)
    return i_below + (level - a) / (b - a) * (i_above - i_below)


def _qrs_extent(env, level):
    """Outermost fractional crossings of ``level`` inside the search window."""
    above = np.flatnonzero(env >= level)
    first, last = int(above[0]), int(above[-1])
    start = _crossing(env, first - 1, first, level) if first > 0 else float(first)
    end = _crossing(env, last + 1, last, level) if last < len(env) - 1 else float(last)
    return start, end


def _measure_one(samples, r, fs, lead_index):
    n = samples.shape[1]
    b_lo, b_hi = _window(r, BASELINE_WINDOW_S, fs, n)
    if b_hi - b_lo < 1:
        return None
    baselines = np.median(samples[:, b_lo:b_hi], axis=1)
    centred = samples - baselines[:, None]

    v1 = centred[lead_index["V1"]]
    w_lo, w_hi = _window(r, (-V1_WINDOW_S, V1_WINDOW_S), fs, n)
    seg = v1[w_lo:w_hi]
    if len(seg) == 0:
        return None
    r_at = int(np.argmax(seg))
    r_amp = max(0.0, float(seg[r_at]))
    after = seg[r_at:]
    s_amp = max(0.0, float(-after.min())) if len(after) else 0.0

    q_lo, q_hi = _window(r, QRS_SEARCH_S, fs, n)
    env = np.abs(centred[:, q_lo:q_hi]).sum(axis=0)
    level = QRS_ENVELOPE_FRACTION * env.max()
    start, end = _qrs_extent(env, level)
    qrs_ms = (end - start) / fs * 1000.0

    i0, i1 = int(math.floor(start)) + q_lo, int(math.ceil(end)) + q_lo + 1
    dt_ms = 1000.0 / fs
    net_i = float(centred[lead_index["I"], i0:i1].sum() * dt_ms)
    net_avf = float(centred[lead_index["aVF"], i0:i1].sum() * dt_ms)

    p_lo, p_hi = _window(r, P_WINDOW_S, fs, n)
    p_seg = centred[lead_index["II"], p_lo:p_hi]
    p_amp = max(0.0, float(p_seg.max())) if len(p_seg) else 0.0
    return r_amp, s_amp, qrs_ms, net_i, net_avf, p_amp


def measure_beats(record, r_peaks) -> FiducialSet:
    """Median V1 R/S amplitudes, QRS duration, axis and lead-II P amplitude over beats."""
    r_peaks = np.asarray(r_peaks, dtype=np.int64)
    if r_peaks.size == 0:
        raise NoBeats(f"{record.record_id}: no beats detected")
    fs = record.sampling_rate
    lead_index = {name: i for i, name in enumerate(record.lead_names)}
    rows = [_measure_one(record.samples, int(r), fs, lead_index) for r in r_peaks]
    rows = [row for row in rows if row is not None]
    if not rows:
        raise NoBeats(f"{record.record_id}: no beat has complete measurement windows")
    r_amp, s_amp, qrs, net_i, net_avf, p_amp = (float(np.median(col)) for col in zip(*rows))
    try:
        axis = frontal_axis(net_i, net_avf)
    except AxisUndefined:
        axis = None
    return FiducialSet(r_peaks, r_amp, s_amp, qrs, axis, p_amp, net_i, net_avf)


def frontal_axis(net_qrs_i, net_qrs_avf, floor=AXIS_FLOOR) -> float:
    """QRS axis in degrees, (-180, 180], from net QRS areas of leads I and aVF."""
    if math.hypot(net_qrs_i, net_qrs_avf) <= floor:
        raise AxisUndefined("net QRS vector below floor")
    angle = math.degrees(math.atan2(net_qrs_avf, net_qrs_i))
    return 180.0 if angle == -180.0 else angle


def evaluate_criteria(f: FiducialSet, thresholds: Thresholds = DEFAULT_THRESHOLDS) -> CriteriaResult:
    notes = []
    if f.frontal_axis is None:
        notes.append("axis undefined")
        warnings.warn("QRS axis undefined; right axis deviation treated as absent", stacklevel=2)
        rad = False
    else:
        rad = f.frontal_axis > thresholds.rad_deg
    tall_narrow = f.r_amp_v1 >= thresholds.r_v1_mv and f.qrs_duration < thresholds.qrs_ms
    r_gt_s = f.r_amp_v1 > f.s_amp_v1
    rae = f.p_amp_ii >= thresholds.p_ii_mv
    return CriteriaResult(rad, tall_narrow, r_gt_s, rae, rad or tall_narrow or r_gt_s, notes)


def screen_record(record, thresholds: Thresholds = DEFAULT_THRESHOLDS):
    """Detect, measure and evaluate in one step."""
    peaks = detect_record_peaks(record)
    fiducials = measure_beats(record, peaks)
    return fiducials, evaluate_criteria(fiducials, thresholds)
