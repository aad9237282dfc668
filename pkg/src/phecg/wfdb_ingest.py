"""WFDB record decoding and PTB-XL metadata/cohort handling.

Only storage format 16 is supported: 16-bit little-endian two's complement
samples, interleaved one frame (all leads) at a time.
"""
from __future__ import annotations

import ast
import csv
import io
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CalibrationError,
    EmptyCohort,
    FormatError,
    RowError,
    SchemaError,
    TruncatedSignal,
    UnsupportedFormat,
)

LEAD_NAMES = ("I", "II", "III", "aVR", "aVL", "aVF",
              "V1", "V2", "V3", "V4", "V5", "V6")
SAMPLING_RATES = (100, 500)

POSITIVE_CODES = frozenset({"RVH", "RAO/RAE"})
RVH_CODE = "RVH"
RAE_CODE = "RAO/RAE"
NORM_CODE = "NORM"
# PTB-XL rhythm statements; they may accompany NORM in a control record.
RHYTHM_CODES = frozenset({
    "SR", "AFIB", "STACH", "SARRH", "SBRAD", "PACE", "SVARR", "BIGU",
    "AFLT", "SVTAC", "PSVT", "TRIGU",
})

_CANONICAL = {name.upper(): name for name in LEAD_NAMES}


@dataclass(frozen=True)
class LeadSpec:
    lead_name: str
    storage_format: str
    adc_gain: float
    baseline: int
    file_name: str
    units: str = "mV"
    adc_resolution: int = 16
    adc_zero: int = 0
    initial_value: int = 0
    checksum: int = 0


@dataclass(frozen=True)
class SignalHeader:
    record_id: str
    num_leads: int
    sampling_rate: int
    samples_per_lead: int
    leads: tuple[LeadSpec, ...]

    @property
    def lead_names(self):
        return tuple(lead.lead_name for lead in self.leads)


@dataclass
class EcgRecord:
    """Twelve calibrated leads in the fixed order of ``LEAD_NAMES``.

    ``samples`` has shape (12, N) and is in millivolts.
    """

    record_id: str
    sampling_rate: int
    samples: np.ndarray
    lead_names: tuple[str, ...] = LEAD_NAMES

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[0] != len(LEAD_NAMES):
            raise FormatError(f"expected 12 x N samples, got shape {samples.shape}")
        if tuple(self.lead_names) != LEAD_NAMES:
            raise FormatError(f"lead order must be {LEAD_NAMES}")
        if not np.all(np.isfinite(samples)):
            raise CalibrationError(f"{self.record_id}: non-finite samples")
        self.samples = samples
        self.lead_names = LEAD_NAMES

    @property
    def n_samples(self):
        return self.samples.shape[1]

    def lead(self, name):
        return self.samples[LEAD_NAMES.index(name)]


@dataclass
class RecordMeta:
    record_id: str
    age: float | None = None
    sex: str = "unknown"
    height: float | None = None
    weight: float | None = None
    scp_codes: dict[str, float] = field(default_factory=dict)
    filename_lr: str | None = None
    filename_hr: str | None = None

    def has_code(self, code, threshold):
        """True if ``code`` is stated with likelihood >= threshold, or stated as 0."""
        if code not in self.scp_codes:
            return False
        likelihood = self.scp_codes[code]
        return likelihood == 0 or likelihood >= threshold


@dataclass
class CohortCatalog:
    entries: list[RecordMeta]
    positive_ids: set[str]
    control_ids: set[str]
    rvh_ids: set[str] = field(default_factory=set)
    rae_ids: set[str] = field(default_factory=set)

    def __post_init__(self):
        if self.positive_ids & self.control_ids:
            raise ValueError("positive and control ids overlap")
        known = {meta.record_id for meta in self.entries}
        missing = (self.positive_ids | self.control_ids) - known
        if missing:
            raise ValueError(f"cohort ids missing from entries: {sorted(missing)[:5]}")

    @property
    def ids(self):
        """Cohort ids in catalog order."""
        chosen = self.positive_ids | self.control_ids
        return [meta.record_id for meta in self.entries if meta.record_id in chosen]

    def label(self, record_id):
        return int(record_id in self.positive_ids)

    def by_id(self):
        return {meta.record_id: meta for meta in self.entries}


# ---------------------------------------------------------------------------
# header / signal

_GAIN_RE = re.compile(
    r"^(?P<gain>[-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)"
    r"(?:\((?P<baseline>[-+]?\d+)\))?"
    r"(?:/(?P<units>\S+))?$"
)


def _text(raw):
    if isinstance(raw, (bytes, bytearray)):
        try:
            return raw.decode("ascii")
        except UnicodeDecodeError as exc:
            raise FormatError(f"header is not ASCII text: {exc}") from None
    return raw


def _parse_record_line(line):
    parts = line.split()
    if len(parts) < 4:
        raise FormatError(f"record line needs name, lead count, rate and length: {line!r}")
    name = parts[0]
    if "/" in name:
        raise UnsupportedFormat("multi-segment records are not supported")
    try:
        num_leads = int(parts[1])
        # "fs/counter_freq(base_counter)" is legal; only fs matters here.
        fs = float(parts[2].split("/")[0])
        n_samples = int(parts[3])
    except ValueError:
        raise FormatError(f"malformed record line: {line!r}") from None
    if fs != int(fs):
        raise FormatError(f"non-integer sampling rate {fs}")
    return name, num_leads, int(fs), n_samples


def _parse_lead_line(line, index):
    parts = line.split(maxsplit=8)
    if len(parts) < 3:
        raise FormatError(f"lead line {index} too short: {line!r}")
    file_name, fmt, gain_field = parts[:3]
    fmt_base = re.match(r"^\d+", fmt)
    if fmt_base is None:
        raise FormatError(f"lead line {index}: bad storage format {fmt!r}")
    if fmt != "16":
        raise UnsupportedFormat(f"lead line {index}: storage format {fmt!r} (only 16)")

    m = _GAIN_RE.match(gain_field)
    if m is None:
        raise FormatError(f"lead line {index}: bad gain field {gain_field!r}")
    gain = float(m["gain"])

    def int_at(pos, default):
        if len(parts) <= pos:
            return default
        try:
            return int(parts[pos])
        except ValueError:
            raise FormatError(f"lead line {index}: field {pos} is not an integer") from None

    adc_res = int_at(3, 16)
    adc_zero = int_at(4, 0)
    initial = int_at(5, adc_zero)
    checksum = int_at(6, 0)
    description = parts[8].strip() if len(parts) > 8 else f"lead{index}"
    baseline = int(m["baseline"]) if m["baseline"] is not None else adc_zero

    if not gain > 0:
        raise FormatError(f"lead line {index}: ADC gain must be positive, got {gain}")
    return LeadSpec(
        lead_name=_CANONICAL.get(description.upper(), description),
        storage_format=fmt,
        adc_gain=gain,
        baseline=baseline,
        file_name=file_name,
        units=m["units"] or "mV",
        adc_resolution=adc_res,
        adc_zero=adc_zero,
        initial_value=initial,
        checksum=checksum,
    )


def parse_header(raw_bytes) -> SignalHeader:
    """Parse a WFDB ``.hea`` header for a single-segment 12-lead record."""
    lines = []
    for line in _text(raw_bytes).splitlines():
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            lines.append(stripped)
    if not lines:
        raise FormatError("empty header")

    record_id, num_leads, fs, n_samples = _parse_record_line(lines[0])
    lead_lines = lines[1:]
    if len(lead_lines) != num_leads:
        raise FormatError(f"header declares {num_leads} leads but has {len(lead_lines)} lead lines")
    leads = tuple(_parse_lead_line(line, i) for i, line in enumerate(lead_lines))

    if num_leads != len(LEAD_NAMES):
        raise FormatError(f"expected 12 leads, header declares {num_leads}")
    if fs not in SAMPLING_RATES:
        raise FormatError(f"sampling rate {fs} Hz not in {SAMPLING_RATES}")
    if n_samples <= 0:
        raise FormatError("header must declare a positive sample count")
    names = [lead.lead_name for lead in leads]
    if sorted(names) != sorted(LEAD_NAMES):
        raise FormatError(f"unexpected lead set {names}")
    if len({lead.file_name for lead in leads}) != 1:
        raise UnsupportedFormat("leads spread over several signal files")
    return SignalHeader(record_id, num_leads, fs, n_samples, leads)


def decode_adc(raw_bytes, header: SignalHeader) -> np.ndarray:
    """Raw ADC integers, shape (num_leads, N), in header lead order."""
    expected = header.num_leads * header.samples_per_lead * 2
    if len(raw_bytes) != expected:
        raise TruncatedSignal(
            f"{header.record_id}: expected {expected} signal bytes, got {len(raw_bytes)}")
    frames = np.frombuffer(raw_bytes, dtype="<i2").reshape(header.samples_per_lead, header.num_leads)
    return frames.T.astype(np.int64)


def decode_signal(raw_bytes, header: SignalHeader) -> EcgRecord:
    adc = decode_adc(raw_bytes, header)
    gains = np.array([lead.adc_gain for lead in header.leads], dtype=np.float64)
    baselines = np.array([lead.baseline for lead in header.leads], dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        mv = (adc - baselines[:, None]) / gains[:, None]
    if not np.all(np.isfinite(mv)):
        raise CalibrationError(f"{header.record_id}: calibration produced non-finite values")
    order = [header.lead_names.index(name) for name in LEAD_NAMES]
    return EcgRecord(header.record_id, header.sampling_rate, mv[order])


def encode_signal(adc, header: SignalHeader) -> bytes:
    """Inverse of ``decode_adc``: interleave (num_leads, N) integers as format 16."""
    adc = np.asarray(adc)
    if adc.shape != (header.num_leads, header.samples_per_lead):
        raise FormatError(f"adc shape {adc.shape} does not match header")
    if adc.min(initial=0) < -32768 or adc.max(initial=0) > 32767:
        raise FormatError("adc values exceed the 16-bit range")
    return adc.T.astype("<i2").tobytes()


def make_header(record_id, sampling_rate, n_samples, adc=None, gain=1000.0, baseline=0) -> SignalHeader:
    file_name = f"{record_id}.dat"
    leads = []
    for i, name in enumerate(LEAD_NAMES):
        first = int(adc[i, 0]) if adc is not None and n_samples else 0
        # WFDB checksum: sum of the lead's samples modulo 2**16
        checksum = int(adc[i].sum()) % 65536 if adc is not None else 0
        leads.append(LeadSpec(name, "16", float(gain), int(baseline), file_name,
                              initial_value=first, checksum=checksum))
    return SignalHeader(record_id, len(LEAD_NAMES), int(sampling_rate), int(n_samples), tuple(leads))


def format_header(header: SignalHeader) -> str:
    out = [f"{header.record_id} {header.num_leads} {header.sampling_rate} {header.samples_per_lead}"]
    for lead in header.leads:
        gain = repr(float(lead.adc_gain))
        out.append(
            f"{lead.file_name} {lead.storage_format} {gain}({lead.baseline})/{lead.units} "
            f"{lead.adc_resolution} {lead.adc_zero} {lead.initial_value} {lead.checksum} 0 "
            f"{lead.lead_name}"
        )
    return "\n".join(out) + "\n"


def quantize(record: EcgRecord, gain=1000.0, baseline=0) -> np.ndarray:
    """mV -> ADC integers, rounding to the nearest count."""
    adc = np.rint(record.samples * gain + baseline).astype(np.int64)
    return np.clip(adc, -32768, 32767)


def write_record(record: EcgRecord, directory, gain=1000.0, baseline=0) -> Path:
    """Write ``record`` as ``<id>.hea`` + ``<id>.dat``; returns the path stem."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    adc = quantize(record, gain, baseline)
    header = make_header(record.record_id, record.sampling_rate, record.n_samples, adc, gain, baseline)
    (directory / f"{record.record_id}.dat").write_bytes(encode_signal(adc, header))
    (directory / f"{record.record_id}.hea").write_text(format_header(header))
    return directory / record.record_id


def read_record(path) -> EcgRecord:
    """Read a record given its stem, ``.hea`` or ``.dat`` path."""
    path = Path(path)
    if path.suffix in (".hea", ".dat"):
        path = path.with_suffix("")
    hea = path.parent / (path.name + ".hea")
    header = parse_header(hea.read_bytes())
    dat = hea.parent / header.leads[0].file_name
    return decode_signal(dat.read_bytes(), header)


# ---------------------------------------------------------------------------
# metadata

MANDATORY_COLUMNS = ("ecg_id", "age", "sex", "height", "weight", "scp_codes")


def _optional_float(value):
    value = (value or "").strip()
    if not value or value.lower() == "nan":
        return None
    result = float(value)
    return None if math.isnan(result) else result


def _parse_sex(value):
    value = (value or "").strip().upper()
    # PTB-XL encodes male as 0 and female as 1
    if value in ("0", "0.0", "M", "MALE"):
        return "M"
    if value in ("1", "1.0", "F", "FEMALE"):
        return "F"
    return "unknown"


def _parse_codes(text):
    codes = ast.literal_eval(text)
    if not isinstance(codes, dict):
        raise ValueError("code map is not a dict")
    out = {}
    for code, likelihood in codes.items():
        likelihood = float(likelihood)
        if not 0 <= likelihood <= 100:
            raise ValueError(f"likelihood {likelihood} for {code} outside [0, 100]")
        out[str(code)] = likelihood
    return out


def load_metadata(csv_bytes, lenient=False) -> list[RecordMeta]:
    """Parse ``ptbxl_database.csv`` content into ``RecordMeta`` rows.

    With ``lenient`` rows whose code map cannot be parsed are skipped instead
    of raising ``RowError``.
    """
    text = csv_bytes.decode("utf-8-sig") if isinstance(csv_bytes, (bytes, bytearray)) else csv_bytes
    reader = csv.DictReader(io.StringIO(text))
    columns = reader.fieldnames or []
    missing = [col for col in MANDATORY_COLUMNS if col not in columns]
    if missing:
        raise SchemaError(f"metadata missing columns: {missing}")

    entries = []
    seen = set()
    # row 1 is the header line
    for row_number, row in enumerate(reader, start=2):
        try:
            codes = _parse_codes(row["scp_codes"])
            record_id = str(int(float(row["ecg_id"])))
            age = _optional_float(row["age"])
            height = _optional_float(row["height"])
            weight = _optional_float(row["weight"])
        except (ValueError, SyntaxError, TypeError) as exc:
            if lenient:
                continue
            raise RowError(row_number, str(exc)) from None
        if record_id in seen:
            raise RowError(row_number, f"duplicate record id {record_id}")
        seen.add(record_id)
        entries.append(RecordMeta(
            record_id=record_id,
            age=age,
            sex=_parse_sex(row["sex"]),
            height=height,
            weight=weight,
            scp_codes=codes,
            filename_lr=row.get("filename_lr") or None,
            filename_hr=row.get("filename_hr") or None,
        ))
    return entries


def is_norm_only(meta: RecordMeta, threshold) -> bool:
    """NORM stated and no statement other than rhythm codes."""
    if not meta.has_code(NORM_CODE, threshold):
        return False
    return all(code == NORM_CODE or code in RHYTHM_CODES for code in meta.scp_codes)


CONTROL_POLICIES = ("norm-matched", "norm-all")


def select_cohort(meta, positive_codes=POSITIVE_CODES, likelihood_threshold=50.0,
                  control_policy="norm-matched", seed=0) -> CohortCatalog:
    positive_codes = set(positive_codes)
    if not positive_codes:
        raise ValueError("positive_codes must be nonempty")
    if control_policy not in CONTROL_POLICIES:
        raise ValueError(f"unknown control policy {control_policy!r}")

    positives, rvh, rae, eligible = set(), set(), set(), []
    for entry in meta:
        hits = {code for code in positive_codes if entry.has_code(code, likelihood_threshold)}
        if hits:
            positives.add(entry.record_id)
            if RVH_CODE in hits:
                rvh.add(entry.record_id)
            if RAE_CODE in hits:
                rae.add(entry.record_id)
        elif is_norm_only(entry, likelihood_threshold):
            eligible.append(entry.record_id)

    if not positives:
        raise EmptyCohort(f"no records carry any of {sorted(positive_codes)}")

    if control_policy == "norm-matched" and len(eligible) > len(positives):
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(eligible), size=len(positives), replace=False)
        controls = {eligible[i] for i in sorted(picked)}
    else:
        controls = set(eligible)
    return CohortCatalog(list(meta), positives, controls, rvh, rae)


def record_path(dataset_root, meta: RecordMeta, sampling_rate=100) -> Path:
    rel = meta.filename_lr if sampling_rate == 100 else meta.filename_hr
    if not rel:
        raise FormatError(f"record {meta.record_id} has no {sampling_rate} Hz filename")
    return Path(dataset_root) / rel


def dataset_root_from_env(value=None):
    return value or os.environ.get("PTBXL_ROOT")
