import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phecg import preprocess as pp
from phecg import wfdb_ingest as wi
from phecg.errors import (CorruptCache, EmptyDataset, ShapeError, TooFewExamples,
                          VersionError)


def leads(rows):
    """A 12-lead matrix whose first lead is ``rows`` and the rest zeros."""
    m = np.zeros((12, len(rows)))
    m[0] = rows
    return m


def test_norm_stats_constant_lead():
    stats = pp.compute_norm_stats([np.full((12, 50), 2.0)])
    assert stats.mean[0] == 2.0
    assert stats.std[0] == 0.0


def test_norm_stats_population_formula():
    stats = pp.compute_norm_stats([leads([1.0, 2.0, 3.0])])
    assert stats.mean[0] == pytest.approx(statistics.fmean([1, 2, 3]))
    assert stats.std[0] == pytest.approx(statistics.pstdev([1, 2, 3]))
    assert stats.std[0] == pytest.approx(math.sqrt(2 / 3))


def test_norm_stats_symmetric_records():
    stats = pp.compute_norm_stats([leads([0.7, -0.3]), leads([-0.7, 0.3])])
    assert stats.mean[0] == pytest.approx(0.0, abs=1e-15)


def test_norm_stats_pool_across_records():
    a, b = leads([1.0, 5.0]), leads([2.0, 2.0, 9.0])
    stats = pp.compute_norm_stats([a, b])
    values = [1.0, 5.0, 2.0, 2.0, 9.0]
    assert stats.mean[0] == pytest.approx(statistics.fmean(values))
    assert stats.std[0] == pytest.approx(statistics.pstdev(values))


def test_norm_stats_empty():
    with pytest.raises(EmptyDataset):
        pp.compute_norm_stats([])


def test_normalize_constant_equal_to_mean():
    m = np.full((12, 5), 3.0)
    out = pp.normalize(m, pp.compute_norm_stats([m]))
    assert np.all(out == 0.0)


def test_normalize_hand_values():
    m = leads([1.0, 2.0, 3.0])
    out = pp.normalize(m, pp.compute_norm_stats([m]))
    expected = [(x - 2.0) / math.sqrt(2 / 3) for x in (1, 2, 3)]
    assert out[0] == pytest.approx(expected)
    assert out[0] == pytest.approx([-1.2247, 0.0, 1.2247], abs=1e-4)


def test_normalize_zero_std_guard():
    stats = pp.NormStats(np.ones(12), np.zeros(12))
    out = pp.normalize(np.random.default_rng(0).normal(size=(12, 20)), stats)
    assert np.all(out == 0.0)


def test_normalize_lead_mismatch():
    with pytest.raises(ShapeError):
        pp.normalize(np.zeros((12, 4)), pp.NormStats(np.zeros(11), np.ones(11)))


def make_catalog(ids, positive):
    entries = [wi.RecordMeta(i, age=60.0, sex="M") for i in ids]
    return wi.CohortCatalog(entries, set(positive), set(ids) - set(positive),
                            rvh_ids=set(positive))


def rec(rid, n=1000, fs=100, seed=0):
    return wi.EcgRecord(rid, fs, np.random.default_rng(seed).normal(size=(12, n)))


def test_make_examples_flattening():
    records = [rec("a"), rec("b", seed=1)]
    cat = make_catalog(["a", "b"], ["a"])
    stats = pp.compute_norm_stats(records)
    ex = pp.make_examples(records, cat, stats)
    assert len(ex[0].input) == 12000
    assert ex[0].label == 1 and ex[0].rvh and not ex[0].rae
    assert ex[1].label == 0
    # row-major: lead 1 starts at offset N
    assert ex[0].input[1000] == pytest.approx(pp.normalize(records[0], stats)[1, 0])


def test_make_examples_demographics():
    records = [rec("a")]
    ex = pp.make_examples(records, make_catalog(["a"], ["a"]), pp.compute_norm_stats(records),
                          include_demographics=True)
    assert len(ex[0].input) == 12000 + pp.N_DEMOGRAPHICS
    assert ex[0].input[-3] == -1.0  # male


def test_make_examples_mixed_rates():
    records = [rec("a", n=1000), rec("b", n=5000, fs=500)]
    with pytest.raises(ShapeError):
        pp.make_examples(records, make_catalog(["a", "b"], ["a"]), pp.compute_norm_stats(records))


def test_split_208_sizes():
    s = pp.split([str(i) for i in range(208)], 0.75, seed=1)
    assert (len(s.train_ids), len(s.test_ids)) == (156, 52)


@pytest.mark.parametrize("seed", range(5))
def test_split_small(seed):
    s = pp.split(list("abcd"), 0.75, seed=seed)
    assert (len(s.train_ids), len(s.test_ids)) == (3, 1)


def test_split_deterministic():
    ids = [f"r{i}" for i in range(50)]
    assert pp.split(ids, 0.75, 9) == pp.split(ids, 0.75, 9)
    assert pp.split(ids, 0.75, 9).train_ids != pp.split(ids, 0.75, 10).train_ids


def test_split_too_few():
    with pytest.raises(TooFewExamples):
        pp.split(["a"], 0.75, 0)


def test_split_three_way():
    s = pp.split([str(i) for i in range(100)], 0.75, 0, val_fraction=0.1)
    assert (len(s.train_ids), len(s.val_ids), len(s.test_ids)) == (75, 10, 15)
    assert s.validation_ids == s.val_ids


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 400), st.floats(0.01, 0.99), st.integers(0, 2**32 - 1))
def test_split_partition(n, fraction, seed):
    ids = [f"x{i}" for i in range(n)]
    s = pp.split(ids, fraction, seed)
    assert set(s.train_ids) | set(s.test_ids) == set(ids)
    assert not set(s.train_ids) & set(s.test_ids)
    assert len(s.train_ids) == math.floor(fraction * n + 0.5)
    assert len(s.train_ids) + len(s.test_ids) == n


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(5, 40), st.integers(0, 1000))
def test_normalized_training_data_is_standard(n_records, n_samples, seed):
    g = np.random.default_rng(seed)
    records = [g.normal(g.uniform(-2, 2), g.uniform(0.1, 3), size=(12, n_samples))
               for _ in range(n_records)]
    stats = pp.compute_norm_stats(records)
    z = np.concatenate([pp.normalize(r, stats) for r in records], axis=1)
    assert np.all(np.abs(z.mean(axis=1)) < 1e-9)
    assert np.all(np.abs(z.std(axis=1) - 1.0) < 1e-9)


def test_leakage_tripwire():
    g = np.random.default_rng(0)
    train = [g.normal(0.0, 1.0, size=(12, 200)) for _ in range(6)]
    test = [g.normal(3.0, 2.0, size=(12, 200)) for _ in range(2)]
    train_only = pp.compute_norm_stats(train)
    pooled = pp.compute_norm_stats(train + test)
    assert not np.allclose(pp.normalize(test[0], train_only), pp.normalize(test[0], pooled))


# --- cache ------------------------------------------------------------------

def small_dataset(n=6, width=7, seed=0):
    g = np.random.default_rng(seed)
    ex = [pp.LabeledExample(f"id{i}", g.normal(size=width), int(i % 2), bool(i % 2), False)
          for i in range(n)]
    return ex, pp.split(ex, 0.5, seed)


def test_cache_round_trip(tmp_path):
    ex, s = small_dataset()
    pp.cache_write(ex, s, tmp_path / "d.ecgp")
    ex2, s2 = pp.cache_read(tmp_path / "d.ecgp")
    assert ex2 == ex
    assert s2 == s


def test_cache_layout_header():
    ex, s = small_dataset(n=4, width=3)
    blob = pp.encode_cache(ex, s)
    assert blob[:4] == b"ECGP"
    assert int.from_bytes(blob[4:6], "little") == pp.CACHE_VERSION
    assert int.from_bytes(blob[6:10], "little") == 4
    expected = 4 + 2 + 4 * 5 + 8 + 8 + 4 * (32 + 3 + 3 * 8) + 4 * 4 + 8
    assert len(blob) == expected


def test_cache_flipped_byte():
    ex, s = small_dataset()
    blob = bytearray(pp.encode_cache(ex, s))
    blob[100] ^= 0x01
    with pytest.raises(CorruptCache):
        pp.decode_cache(bytes(blob))


def test_cache_future_version():
    ex, s = small_dataset()
    blob = bytearray(pp.encode_cache(ex, s))
    blob[4:6] = (pp.CACHE_VERSION + 1).to_bytes(2, "little")
    with pytest.raises(VersionError):
        pp.decode_cache(bytes(blob))


def test_cache_write_is_atomic(tmp_path):
    ex, s = small_dataset()
    path = tmp_path / "d.ecgp"
    pp.cache_write(ex, s, path)
    assert [p.name for p in tmp_path.iterdir()] == ["d.ecgp"]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(1, 9), st.integers(0, 10**6),
       st.floats(0.1, 0.9))
def test_cache_round_trip_property(n, width, seed, fraction):
    g = np.random.default_rng(seed)
    ex = []
    for i in range(n):
        rvh, rae = bool(g.integers(2)), bool(g.integers(2))
        ex.append(pp.LabeledExample(f"r{i}-{seed}", g.normal(size=width) * 1e3,
                                    int(rvh or rae), rvh, rae))
    s = pp.split(ex, fraction, seed)
    ex2, s2 = pp.decode_cache(pp.encode_cache(ex, s))
    assert ex2 == ex and s2 == s
