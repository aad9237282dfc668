"""Normalization, labeled examples, the train/test split and the ECGP cache.

ECGP layout (all integers little-endian, see docs/formats.md)::

    magic      4s   b"ECGP"
    version    u16
    count      u32  number of examples
    input_len  u32
    n_train    u32
    n_test     u32
    n_val      u32
    fraction   f64
    seed       i64
    count x example:
        record_id  32s  UTF-8, NUL padded
        label      u8
        rvh        u8
        rae        u8
        input      input_len x f64
    n_train + n_test + n_val x u32   example indices of each split part
    checksum   u64  BLAKE2b-64 of every preceding byte
"""
from __future__ import annotations

import hashlib
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptCache,
    EmptyDataset,
    FormatError,
    ShapeError,
    TooFewExamples,
    VersionError,
)
from .wfdb_ingest import CohortCatalog, RecordMeta

CACHE_MAGIC = b"ECGP"
CACHE_VERSION = 1
ID_WIDTH = 32
N_DEMOGRAPHICS = 4

_HEAD = struct.Struct("<4sHIIIIIdq")
_CHECKSUM = struct.Struct("<Q")


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ShapeError("mean and std must be equal-length vectors")
        if np.any(self.std < 0):
            raise ValueError("std must be non-negative")


@dataclass
class LabeledExample:
    record_id: str
    input: np.ndarray
    label: int
    rvh: bool = False
    rae: bool = False

    def __post_init__(self):
        self.input = np.asarray(self.input, dtype=np.float64)
        if self.label != int(self.rvh or self.rae) and (self.rvh or self.rae):
            raise ValueError(f"{self.record_id}: label disagrees with sub-labels")

    def __eq__(self, other):
        if not isinstance(other, LabeledExample):
            return NotImplemented
        return (self.record_id == other.record_id
                and self.label == other.label
                and self.rvh == other.rvh
                and self.rae == other.rae
                and np.array_equal(self.input, other.input))


@dataclass
class DatasetSplit:
    train_ids: list[str]
    test_ids: list[str]
    fraction: float
    seed: int
    val_ids: list[str] = field(default_factory=list)

    @property
    def validation_ids(self):
        """Ids used for per-epoch validation; the test part unless a val part exists."""
        return self.val_ids or self.test_ids


def _as_matrix(record):
    return record.samples if hasattr(record, "samples") else np.asarray(record, dtype=np.float64)


def compute_norm_stats(train_records) -> NormStats:
    """Per-lead mean and population std over every training sample."""
    mats = [_as_matrix(r) for r in train_records]
    if not mats:
        raise EmptyDataset("no training records")
    n_leads = mats[0].shape[0]
    if any(m.shape[0] != n_leads for m in mats):
        raise ShapeError("records disagree on lead count")
    stacked = np.concatenate(mats, axis=1)
    mean = stacked.mean(axis=1)
    std = stacked.std(axis=1)
    return NormStats(mean, std)


def normalize(record, stats: NormStats) -> np.ndarray:
    x = _as_matrix(record)
    if x.shape[0] != stats.mean.shape[0]:
        raise ShapeError(f"record has {x.shape[0]} leads, stats have {stats.mean.shape[0]}")
    safe = np.where(stats.std > 0, stats.std, 1.0)
    out = (x - stats.mean[:, None]) / safe[:, None]
    out[stats.std == 0] = 0.0
    return out


def demographic_vector(meta: RecordMeta | None) -> np.ndarray:
    """Age, sex, height, weight on unit-ish scales; missing values stay 0."""
    if meta is None:
        return np.zeros(N_DEMOGRAPHICS)
    sex = {"M": -1.0, "F": 1.0}.get(meta.sex, 0.0)
    return np.array([
        (meta.age - 60.0) / 20.0 if meta.age is not None else 0.0,
        sex,
        (meta.height - 170.0) / 10.0 if meta.height is not None else 0.0,
        (meta.weight - 75.0) / 15.0 if meta.weight is not None else 0.0,
    ])


def make_input(record, stats, meta=None, include_demographics=False) -> np.ndarray:
    flat = normalize(record, stats).ravel()
    if include_demographics:
        flat = np.concatenate([flat, demographic_vector(meta)])
    return flat


def make_examples(records, catalog: CohortCatalog, stats: NormStats,
                  include_demographics=False) -> list[LabeledExample]:
    metas = catalog.by_id()
    width = None
    examples = []
    for record in records:
        rid = record.record_id
        if rid not in metas:
            raise KeyError(f"record {rid} not in catalog")
        if width is None:
            width = record.samples.shape[1]
        elif record.samples.shape[1] != width:
            raise ShapeError(f"record {rid} has {record.samples.shape[1]} samples per lead, expected {width}")
        rvh = rid in catalog.rvh_ids
        rae = rid in catalog.rae_ids
        examples.append(LabeledExample(
            record_id=rid,
            input=make_input(record, stats, metas[rid], include_demographics),
            label=catalog.label(rid),
            rvh=rvh,
            rae=rae,
        ))
    return examples


def stack(examples, ids=None, multilabel=False):
    """(X, y) arrays for ``ids`` (all examples when None)."""
    if ids is not None:
        index = {ex.record_id: ex for ex in examples}
        examples = [index[i] for i in ids]
    if not examples:
        raise EmptyDataset("no examples to stack")
    X = np.stack([ex.input for ex in examples])
    if multilabel:
        y = np.array([[ex.rvh, ex.rae] for ex in examples], dtype=np.float64)
    else:
        y = np.array([[ex.label] for ex in examples], dtype=np.float64)
    return X, y


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split(examples, fraction=0.75, seed=0, val_fraction=0.0) -> DatasetSplit:
    """Seeded shuffle-and-cut; ``|train| = round(fraction * n)`` with halves rounding up.

    A nonzero ``val_fraction`` carves a validation part out of the test side
    (the three-way variant); the train size is unchanged.
    """
    ids = [ex.record_id if isinstance(ex, LabeledExample) else str(ex) for ex in examples]
    n = len(ids)
    if n < 2:
        raise TooFewExamples(f"need at least 2 examples, got {n}")
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    if len(set(ids)) != n:
        raise ValueError("duplicate example ids")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    n_train = _round_half_up(fraction * n)
    train, rest = shuffled[:n_train], shuffled[n_train:]
    val = []
    if val_fraction:
        n_val = min(_round_half_up(val_fraction * n), len(rest))
        val, rest = rest[:n_val], rest[n_val:]
    return DatasetSplit(train, rest, fraction, seed, val)


# ---------------------------------------------------------------------------
# cache

def _encode_id(record_id):
    raw = record_id.encode("utf-8")
    if len(raw) > ID_WIDTH or b"\x00" in raw:
        raise FormatError(f"record id {record_id!r} does not fit {ID_WIDTH} bytes")
    return raw.ljust(ID_WIDTH, b"\x00")


def encode_cache(examples, dsplit: DatasetSplit) -> bytes:
    input_len = len(examples[0].input) if examples else 0
    if any(len(ex.input) != input_len for ex in examples):
        raise ShapeError("examples disagree on input length")
    position = {ex.record_id: i for i, ex in enumerate(examples)}
    parts = [_HEAD.pack(CACHE_MAGIC, CACHE_VERSION, len(examples), input_len,
                        len(dsplit.train_ids), len(dsplit.test_ids), len(dsplit.val_ids),
                        float(dsplit.fraction), int(dsplit.seed))]
    for ex in examples:
        parts.append(_encode_id(ex.record_id))
        parts.append(struct.pack("<BBB", int(ex.label), int(ex.rvh), int(ex.rae)))
        parts.append(np.asarray(ex.input, dtype="<f8").tobytes())
    for ids in (dsplit.train_ids, dsplit.test_ids, dsplit.val_ids):
        parts.append(np.array([position[i] for i in ids], dtype="<u4").tobytes())
    body = b"".join(parts)
    return body + _CHECKSUM.pack(_digest(body))


def _digest(body):
    return int.from_bytes(hashlib.blake2b(body, digest_size=8).digest(), "little")


def decode_cache(blob: bytes):
    if len(blob) < _HEAD.size + _CHECKSUM.size:
        raise CorruptCache("cache file too short")
    magic, version = struct.unpack_from("<4sH", blob)
    if magic != CACHE_MAGIC:
        raise CorruptCache(f"bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise VersionError(f"cache version {version}, this build reads {CACHE_VERSION}")
    body, (stored,) = blob[:-_CHECKSUM.size], _CHECKSUM.unpack(blob[-_CHECKSUM.size:])
    if _digest(body) != stored:
        raise CorruptCache("checksum mismatch")

    _, _, count, input_len, n_train, n_test, n_val, fraction, seed = _HEAD.unpack_from(body)
    offset = _HEAD.size
    row = ID_WIDTH + 3 + 8 * input_len
    need = offset + count * row + 4 * (n_train + n_test + n_val)
    if need != len(body):
        raise CorruptCache(f"payload length {len(body)} does not match header ({need})")
    examples = []
    for _ in range(count):
        rid = body[offset:offset + ID_WIDTH].rstrip(b"\x00").decode("utf-8")
        label, rvh, rae = struct.unpack_from("<BBB", body, offset + ID_WIDTH)
        start = offset + ID_WIDTH + 3
        vec = np.frombuffer(body, dtype="<f8", count=input_len, offset=start).astype(np.float64)
        examples.append(LabeledExample(rid, vec, label, bool(rvh), bool(rae)))
        offset += row
    parts = []
    for size in (n_train, n_test, n_val):
        idx = np.frombuffer(body, dtype="<u4", count=size, offset=offset)
        offset += 4 * size
        if size and idx.max() >= count:
            raise CorruptCache("split index out of range")
        parts.append([examples[i].record_id for i in idx])
    return examples, DatasetSplit(parts[0], parts[1], fraction, seed, parts[2])


def atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cache_write(examples, dsplit, path):
    atomic_write(path, encode_cache(examples, dsplit))


def cache_read(path):
    return decode_cache(Path(path).read_bytes())
