import collections
import os

import pytest

import memreduce as mr


def test_record_layout_and_round_trip():
    # INT tag, i64 little-endian, COUNT tag, i64 little-endian.
    rec = mr.encode_pair(7, 3)
    assert rec == bytes([1]) + (7).to_bytes(8, "little") + bytes([2]) + (3).to_bytes(8, "little")
    assert len(rec) == 18
    for key, value in [("word", b"\x00\xff"), ((2, 0), [1.5, -2.0]), (-1, 0)]:
        k, v, used = mr.decode_pair(mr.encode_pair(key, value) + b"junk")
        assert (k, v) == (key, value)
        assert used == len(mr.encode_pair(key, value))


def test_csc_block():
    b = mr.CscBlock.from_dense(2, 2, [1.0, 0.0, 2.0, 3.0])  # column-major
    assert b.nnz == 3 and b.well_formed()
    assert b.multiply([1.0, 1.0]) == [3.0, 3.0]
    k, v, _ = mr.decode_pair(mr.encode_pair((0, 1), b))
    assert v == b
    with pytest.raises(mr.MemreduceError):
        b.multiply([1.0])


def test_batch_dedup_follows_object_sharing():
    shared = b"x" * 100
    pairs = [(i, shared) for i in range(4)]
    full = mr.serialize_batch(pairs, "full")
    off = mr.serialize_batch(pairs, "off")
    assert full["value_literals"] == 1 and full["value_refs"] == 3
    assert off["value_literals"] == 4 and off["value_refs"] == 0
    assert len(full["records"]) < len(off["records"])
    assert mr.deserialize_batch(full["records"]) == pairs


def test_checksum_is_order_independent():
    pairs = [(i, i * i) for i in range(20)]
    assert mr.output_checksum(pairs) == mr.output_checksum(list(reversed(pairs)))
    assert mr.output_checksum(pairs) != mr.output_checksum(pairs[1:])


def test_pair_file_round_trip(tmp_path):
    pairs = [("a", 1), ("b", 2)]
    mr.write_pair_file(tmp_path / "f", pairs)
    assert open(tmp_path / "f", "rb").read(8) == b"MRPAIRS1"
    assert mr.read_pair_file(tmp_path / "f") == pairs


@pytest.mark.parametrize("engine", ["m3r", "baseline"])
def test_wordcount(engine):
    r = mr.Runner(engine, places=2)
    rows = r.wordcount(text="to be or not to be")
    assert len(rows) == 1 and rows[0]["engine"] == engine
    assert set(rows[0]) == set(mr.report_columns())
    assert dict(r.read_output("/wc/out")) == {"to": 2, "be": 2, "or": 1, "not": 1}


def test_wordcount_matches_oracle_on_both_engines():
    text = mr.generate_text(50000, seed=3)
    want = mr.wordcount_oracle(text)
    assert want == dict(collections.Counter(text.split()))
    sums = set()
    for engine in ("m3r", "baseline"):
        rows = mr.Runner(engine, places=3).wordcount(text=text)
        sums.add(rows[0]["outputChecksum"])
    assert len(sums) == 1


def test_microbench_cache_behavior():
    m3r = mr.Runner("m3r", places=2).microbench(pairs=3000, value_bytes=100, remote_fraction=0.5)
    base = mr.Runner("baseline", places=2).microbench(pairs=3000, value_bytes=100, remote_fraction=0.5)
    assert [r["iteration"] for r in m3r] == [1, 2, 3]
    assert all(r["readerInvocations"] == 0 and r["cacheMisses"] == 0 for r in m3r[1:])
    assert all(r["readerInvocations"] > 0 and r["spillBytes"] > 0 for r in base)
    assert [r["outputChecksum"] for r in m3r] == [r["outputChecksum"] for r in base]


def test_matvec_against_dense_oracle():
    r = mr.Runner("m3r", places=2)
    rows = r.matvec(block_size=20, blocks=3, sparsity=0.1, iterations=2)
    assert len(rows) == 4
    assert all(row["pairsShuffledRemote"] == 0 for row in rows[1::2])
    got = mr.assemble_vector(r.read_output("/matvec/V2"), 3, 20)
    want = mr.matvec_oracle(block_size=20, blocks=3, sparsity=0.1, iterations=2)
    assert all(abs(a - b) <= 1e-9 * max(abs(b), 1e-300) for a, b in zip(got, want))


def test_repartition_and_data_dir(tmp_path):
    r = mr.Runner("m3r", places=2, data_dir=tmp_path)
    pairs = [(i, i % 3) for i in range(50)]
    r.write_pairs("/raw", pairs)
    r.repartition("/raw", "/aligned", reducers=4)
    assert sorted(r.read_output("/aligned")) == sorted(pairs)
    assert os.path.isdir(tmp_path / "aligned")


def test_job_failure_raises():
    r = mr.Runner("m3r", places=1)
    with pytest.raises(mr.MemreduceError, match="InputNotFound"):
        r.repartition("/missing", "/out")
    with pytest.raises(ValueError):
        mr.Runner("hadoop")


def test_store_operations():
    s = mr.Store(3)
    s.mkdirs("/a/b")
    s.write("/a/b/f", [(1, 1), (2, 2)], place=2)
    s.write("/a/b/f", [(3, 3)], place=1)
    info = s.info("/a/b/f")
    assert info["kind"] == "file"
    assert [(b["home"], b["length"]) for b in info["blocks"]] == [(2, 2), (1, 1)]
    assert s.read("/a/b/f") == [(1, 1), (2, 2), (3, 3)]
    s.rename("/a", "/z")
    assert not s.exists("/a/b/f") and s.exists("/z/b/f")
    assert [e["path"] for e in s.list("/z")] == ["/z/b"]
    with pytest.raises(mr.MemreduceError, match="DestinationExists"):
        s.mkdirs("/y")
        s.rename("/y", "/z")
    s.remove("/z")
    assert not s.exists("/z/b")
    assert s.lock_entries() == 0
    assert 0 <= s.metadata_owner("/z") < 3
