"""On-disk container: blob format, round trips, fault injection."""

import numpy as np
import pytest

from neuroforge.container import (
    MAGIC,
    load_container,
    read_blob,
    save_container,
    write_blob,
)
from neuroforge.errors import DataIntegrityError, SchemaVersionError
from neuroforge.signal import MultichannelTimeSeries, PairedDataset, PairedSample


def tiny_dataset(seed=0, n=3):
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        src = MultichannelTimeSeries(
            ("e0", "e1"), 10.0, 0.0, rng.standard_normal((2, 20)).astype(np.float32)
        )
        tgt = MultichannelTimeSeries(
            ("r0", "r1", "r2"), 5.0, 2.0, rng.standard_normal((3, 10))
        )
        samples.append(
            PairedSample(src, tgt, f"cond_{i % 2}", f"sub{i}", "A", synthetic=(i == 2))
        )
    return PairedDataset(samples=tuple(samples), manifest={"seed": seed, "note": "t"})


class TestBlob:
    def test_round_trip_dtypes(self, tmp_path):
        for arr in (
            np.arange(24, dtype=np.float64).reshape(2, 3, 4),
            np.arange(6, dtype=np.float32).reshape(3, 2),
        ):
            p = tmp_path / "x.blob"
            write_blob(p, arr)
            back = read_blob(p)
            assert back.dtype == arr.dtype
            np.testing.assert_array_equal(back, arr)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "x.blob"
        write_blob(p, np.arange(10, dtype=np.float64))
        raw = p.read_bytes()
        p.write_bytes(raw[:-8])
        with pytest.raises(DataIntegrityError, match=r"expected \d+ bytes, got \d+"):
            read_blob(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.blob"
        write_blob(p, np.arange(4, dtype=np.float64))
        raw = bytearray(p.read_bytes())
        raw[0] = ord("X")
        p.write_bytes(bytes(raw))
        with pytest.raises(DataIntegrityError, match="magic"):
            read_blob(p)

    def test_future_blob_version(self, tmp_path):
        p = tmp_path / "x.blob"
        write_blob(p, np.arange(4, dtype=np.float64))
        raw = bytearray(p.read_bytes())
        raw[: len(MAGIC)] = b"NFORGE99" + b"\x00" * 8
        p.write_bytes(bytes(raw))
        with pytest.raises(SchemaVersionError):
            read_blob(p)


class TestContainer:
    def test_round_trip_byte_exact(self, tmp_path):
        ds = tiny_dataset()
        d1 = tmp_path / "a"
        save_container(ds, d1)
        back = load_container(d1)
        assert back.n_samples == ds.n_samples
        for s1, s2 in zip(ds.samples, back.samples):
            np.testing.assert_array_equal(s1.source_epoch.data, s2.source_epoch.data)
            np.testing.assert_array_equal(s1.target_epoch.data, s2.target_epoch.data)
            assert s1.source_epoch.data.dtype == s2.source_epoch.data.dtype
            assert s1.condition_label == s2.condition_label
            assert s1.subject_id == s2.subject_id
            assert s1.synthetic == s2.synthetic
        assert back.manifest == ds.manifest
        # Saving the loaded dataset reproduces every byte.
        d2 = tmp_path / "b"
        save_container(back, d2)
        files1 = sorted(p.relative_to(d1) for p in d1.rglob("*") if p.is_file())
        files2 = sorted(p.relative_to(d2) for p in d2.rglob("*") if p.is_file())
        assert files1 == files2
        for rel in files1:
            assert (d1 / rel).read_bytes() == (d2 / rel).read_bytes()

    def test_truncated_blob_rejected(self, tmp_path):
        ds = tiny_dataset()
        d = tmp_path / "a"
        save_container(ds, d)
        blob = sorted((d / "blobs").iterdir())[0]
        blob.write_bytes(blob.read_bytes()[:-4])
        with pytest.raises(DataIntegrityError, match="bytes"):
            load_container(d)

    def test_future_schema_version_no_partial_load(self, tmp_path):
        ds = tiny_dataset()
        d = tmp_path / "a"
        save_container(ds, d)
        manifest = (d / "manifest.json").read_text()
        (d / "manifest.json").write_text(manifest.replace('"schema_version":1', '"schema_version":99'))
        # Corrupt a blob too: a version error must fire before any blob read.
        blob = sorted((d / "blobs").iterdir())[0]
        blob.write_bytes(b"garbage")
        with pytest.raises(SchemaVersionError, match="99"):
            load_container(d)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataIntegrityError, match="manifest"):
            load_container(tmp_path / "nope")
