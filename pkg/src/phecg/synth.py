"""Synthetic 12-lead records with planted fiducial parameters.

Each beat is a sum of Gaussian bumps (P, R, S, T). Beat centres are snapped to
the sample grid so that planted amplitudes are the sampled extremes. Limb
leads are projections of one frontal QRS vector, so the ratio of net QRS area
in aVF and I is tan(target_axis) exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .features import DEFAULT_THRESHOLDS, CriteriaResult, Thresholds
from .wfdb_ingest import LEAD_NAMES, EcgRecord

# measurement tolerances the generator is built to stay inside
TOLERANCE = {"amp_mv": 0.05, "axis_deg": 5.0, "qrs_ms": 10.0}

LIMB_ANGLES = {"I": 0.0, "II": 60.0, "III": 120.0, "aVR": -150.0, "aVL": -30.0, "aVF": 90.0}
# (R, S) amplitudes for V2..V6
PRECORDIAL_RS = {"V2": (0.6, 0.9), "V3": (0.9, 0.7), "V4": (1.2, 0.5), "V5": (1.4, 0.3), "V6": (1.1, 0.1)}
FRONTAL_AMP = 1.0
LIMB_S_RATIO = 0.3
P_CENTER_S = -0.190
P_SIGMA_S = 0.020
T_CENTER_S = 0.300
T_SIGMA_S = 0.040
T_AMP = 0.2
QRS_SIGMA_FRACTION = 0.15
S_OFFSET_FRACTION = 0.34


@dataclass(frozen=True)
class SynthParams:
    heart_rate: float = 60.0
    r_amp_v1: float = 0.3
    s_amp_v1: float = 0.8
    qrs_duration: float = 90.0
    target_axis: float = 60.0
    p_amp_ii: float = 0.15
    noise_std: float = 0.0
    sampling_rate: int = 100
    duration: float = 10.0
    seed: int = 0
    record_id: str = "synth"

    def __post_init__(self):
        if not 30 <= self.heart_rate <= 220:
            raise ValueError("heart_rate must lie in [30, 220] bpm")
        if min(self.r_amp_v1, self.s_amp_v1, self.p_amp_ii) < 0:
            raise ValueError("amplitudes must be non-negative")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.qrs_duration <= 0 or self.duration <= 0:
            raise ValueError("durations must be positive")


def beat_indices(params: SynthParams) -> np.ndarray:
    """Sample indices of the planted R peaks."""
    rr = 60.0 / params.heart_rate
    n = int(round(params.duration * params.sampling_rate))
    times = rr / 2 + rr * np.arange(int(math.floor(params.duration / rr + 1e-9)))
    idx = np.rint(times * params.sampling_rate).astype(np.int64)
    return idx[idx < n]


def intended_flags(params: SynthParams, thresholds: Thresholds = DEFAULT_THRESHOLDS) -> CriteriaResult:
    rad = params.target_axis > thresholds.rad_deg
    tall = params.r_amp_v1 >= thresholds.r_v1_mv and params.qrs_duration < thresholds.qrs_ms
    r_gt_s = params.r_amp_v1 > params.s_amp_v1
    rae = params.p_amp_ii >= thresholds.p_ii_mv
    return CriteriaResult(rad, tall, r_gt_s, rae, rad or tall or r_gt_s)


def _gauss(t, center, sigma):
    return np.exp(-0.5 * ((t - center) / sigma) ** 2)


def _qrs_kernels(params):
    fs = params.sampling_rate
    sigma = params.qrs_duration / 1000.0 * QRS_SIGMA_FRACTION
    s_off = round(params.qrs_duration / 1000.0 * S_OFFSET_FRACTION * fs) / fs
    half = int(math.ceil(0.5 * fs))
    t = np.arange(-half, half + 1) / fs
    return t, _gauss(t, 0.0, sigma), _gauss(t, s_off, sigma)


def _solve_rs(g_r, g_s, r_amp, s_amp):
    """Bump heights whose sampled max is r_amp and post-peak min is -s_amp."""
    a, b = r_amp, s_amp
    for _ in range(50):
        wave = a * g_r - b * g_s
        peak = int(np.argmax(wave))
        got_r = max(0.0, wave[peak])
        got_s = max(0.0, -wave[peak:].min())
        if abs(got_r - r_amp) < 1e-12 and abs(got_s - s_amp) < 1e-12:
            break
        a = max(0.0, a + (r_amp - got_r))
        b = max(0.0, b + (s_amp - got_s))
    return a, b


def _beat_templates(params):
    t, g_r, g_s = _qrs_kernels(params)
    p = _gauss(t, P_CENTER_S, P_SIGMA_S)
    tw = _gauss(t, T_CENTER_S, T_SIGMA_S)
    templates = {}
    theta = math.radians(params.target_axis)
    q = g_r - LIMB_S_RATIO * g_s
    for name, phi in LIMB_ANGLES.items():
        proj = math.cos(theta - math.radians(phi))
        p_proj = math.cos(math.radians(60.0 - phi))
        t_amp = -T_AMP if name == "aVR" else T_AMP
        templates[name] = FRONTAL_AMP * proj * q + params.p_amp_ii * p_proj * p + t_amp * tw
    a, b = _solve_rs(g_r, g_s, params.r_amp_v1, params.s_amp_v1)
    templates["V1"] = a * g_r - b * g_s + 0.5 * params.p_amp_ii * p + 0.5 * T_AMP * tw
    for name, (r, s) in PRECORDIAL_RS.items():
        templates[name] = r * g_r - s * g_s + 0.5 * params.p_amp_ii * p + T_AMP * tw
    return len(t) // 2, templates


def generate(params: SynthParams, thresholds: Thresholds = DEFAULT_THRESHOLDS):
    """Return ``(EcgRecord, intended CriteriaResult)``."""
    fs = params.sampling_rate
    n = int(round(params.duration * fs))
    half, templates = _beat_templates(params)
    samples = np.zeros((len(LEAD_NAMES), n))
    for r in beat_indices(params):
        lo, hi = r - half, r + half + 1
        src_lo, src_hi = max(0, -lo), (2 * half + 1) - max(0, hi - n)
        for i, name in enumerate(LEAD_NAMES):
            samples[i, max(0, lo):min(n, hi)] += templates[name][src_lo:src_hi]
    if params.noise_std > 0:
        rng = np.random.default_rng(params.seed)
        samples += rng.normal(0.0, params.noise_std, size=samples.shape)
    record = EcgRecord(params.record_id, fs, samples)
    return record, intended_flags(params, thresholds)


# ---------------------------------------------------------------------------
# parameter sampling on either side of each threshold

def side_value(rng, threshold, above, margin, spread):
    """Uniform draw at least ``margin`` away from ``threshold`` on the chosen side."""
    offset = margin + rng.uniform(0.0, spread)
    return threshold + offset if above else threshold - offset


def sample_params(rng, *, rad, tall_r, wide_qrs, r_gt_s, rae, margin=2.0,
                  thresholds: Thresholds = DEFAULT_THRESHOLDS, **overrides) -> SynthParams:
    """Draw parameters with each criterion input on a chosen side of its threshold.

    ``margin`` is in multiples of the measurement tolerance.
    """
    amp_m = margin * TOLERANCE["amp_mv"]
    axis = side_value(rng, thresholds.rad_deg, rad, margin * TOLERANCE["axis_deg"], 40.0)
    qrs = side_value(rng, thresholds.qrs_ms, wide_qrs, margin * TOLERANCE["qrs_ms"], 20.0)
    r = side_value(rng, thresholds.r_v1_mv, tall_r, amp_m, 0.4)
    r = max(r, amp_m)
    # R vs S difference measured with two amplitude errors
    gap = 2 * amp_m + rng.uniform(0.0, 0.4)
    s = r - gap if r_gt_s else r + gap
    s = max(s, 0.0)
    p = side_value(rng, thresholds.p_ii_mv, rae, amp_m, 0.15)
    p = max(p, 0.0)
    values = dict(target_axis=axis, qrs_duration=qrs, r_amp_v1=r, s_amp_v1=s, p_amp_ii=p,
                  heart_rate=float(rng.uniform(50.0, 90.0)), seed=int(rng.integers(2**31)))
    values.update(overrides)
    return SynthParams(**values)


def criteria_grid(n=200, seed=0, margin=2.0, noise_std=0.0, sampling_rate=100):
    """``n`` parameter sets cycling through every combination of threshold sides."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        bits = [(k >> b) & 1 for b in range(5)]
        rad, tall_r, wide, r_gt_s, rae = (bool(b) for b in bits)
        out.append(sample_params(rng, rad=rad, tall_r=tall_r, wide_qrs=wide, r_gt_s=r_gt_s,
                                 rae=rae, margin=margin, noise_std=noise_std,
                                 sampling_rate=sampling_rate, record_id=f"grid{k:04d}"))
    return out


@dataclass
class SyntheticCase:
    record: EcgRecord
    params: SynthParams
    intended: CriteriaResult
    label: int


def generate_training_set(n, class_margin=2.0, seed=0, sampling_rate=100, noise_std=0.01,
                          duration=10.0):
    """Balanced positives (every criterion met) and negatives (none met).

    Positives clear each threshold by ``class_margin`` tolerances on the
    positive side, negatives on the negative side.
    """
    if n < 4:
        raise ValueError("n must be at least 4")
    if class_margin <= 0:
        raise ValueError("class_margin must be positive")
    rng = np.random.default_rng(seed)
    cases = []
    for k in range(n):
        positive = k < n // 2
        params = sample_params(
            rng, rad=positive, tall_r=positive, wide_qrs=False, r_gt_s=positive, rae=positive,
            margin=class_margin, noise_std=noise_std, sampling_rate=sampling_rate,
            duration=duration, record_id=f"syn{k:05d}")
        # fixed rhythm so beats line up across records
        params = replace(params, heart_rate=60.0)
        record, intended = generate(params)
        cases.append(SyntheticCase(record, params, intended, int(positive)))
    order = rng.permutation(n)
    return [cases[i] for i in order]


def synthetic_catalog(cases):
    """A ``CohortCatalog`` whose positives carry both RVH and RAE sub-labels."""
    from .wfdb_ingest import CohortCatalog, RecordMeta

    entries, pos, ctl, rvh, rae = [], set(), set(), set(), set()
    for case in cases:
        rid = case.record.record_id
        codes = {"RVH": 100.0, "RAO/RAE": 100.0} if case.label else {"NORM": 100.0, "SR": 0.0}
        entries.append(RecordMeta(rid, scp_codes=codes))
        if case.label:
            pos.add(rid)
            if case.intended.rvh_positive:
                rvh.add(rid)
            if case.intended.rae_flag:
                rae.add(rid)
        else:
            ctl.add(rid)
    return CohortCatalog(entries, pos, ctl, rvh, rae)
