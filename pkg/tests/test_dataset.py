import struct

import numpy as np
import pytest

from riesense import dataset as dsm
from riesense.errors import ContractError, FormatError, UnsupportedVersionError


def make_dataset(n=12, channels=3, timesteps=8, seed=0):
    rng = np.random.default_rng(seed)
    return dsm.Dataset(
        data=rng.normal(size=(n, channels, timesteps)),
        labels=np.arange(n) % 3,
        class_names=["a", "b", "c"],
        seed=seed,
        domains=(np.arange(n) % 2).astype(np.uint8),
        provenance=(np.arange(n) % 4).astype(np.uint8),
        stats={"mean": [0.0, 1.0, 2.0], "std": [1.0, 1.0, 1.0]},
    )


@pytest.fixture
def saved(tmp_path):
    ds = make_dataset()
    path = dsm.save_dataset(ds, tmp_path / "d.sglb")
    return ds, path


class TestRoundtrip:
    def test_payload_is_float32_rounded(self, saved):
        ds, path = saved
        back = dsm.load_dataset(path)
        np.testing.assert_array_equal(back.data, ds.data.astype(np.float32).astype(np.float64))
        np.testing.assert_array_equal(back.labels, ds.labels)
        np.testing.assert_array_equal(back.domains, ds.domains)
        np.testing.assert_array_equal(back.provenance, ds.provenance)
        assert back.class_names == ds.class_names
        assert back.stats == ds.stats
        assert back.seed == ds.seed

    def test_second_cycle_bit_exact(self, saved, tmp_path):
        _, path = saved
        once = dsm.load_dataset(path)
        path2 = dsm.save_dataset(once, tmp_path / "e.sglb")
        assert path2.read_bytes() == path.read_bytes()
        np.testing.assert_array_equal(dsm.load_dataset(path2).data, once.data)

    def test_empty(self, tmp_path):
        ds = dsm.Dataset(np.zeros((0, 2, 4)), np.zeros(0), ["a"])
        back = dsm.load_dataset(dsm.save_dataset(ds, tmp_path / "z.sglb"))
        assert len(back) == 0 and back.shape == (2, 4)

    def test_header_layout(self, saved):
        ds, path = saved
        raw = path.read_bytes()
        magic, version, channels, timesteps, n, classes = struct.unpack_from("<4sIIIQI", raw)
        assert (magic, version, channels, timesteps, n, classes) == (b"SGLB", 1, 3, 8, 12, 3)

    def test_manifest_counts(self, saved):
        ds, _ = saved
        counts = ds.manifest()["counts"]
        assert counts["a"] == {"source": 2, "shifted": 2}
        assert sum(v["source"] + v["shifted"] for v in counts.values()) == len(ds)


class TestCorruption:
    def test_truncated_payload(self, saved, tmp_path):
        _, path = saved
        raw = path.read_bytes()
        bad = tmp_path / "t.sglb"
        bad.write_bytes(raw[:-10])
        with pytest.raises(FormatError, match="truncated payload in sample 11 of 12") as info:
            dsm.load_dataset(bad)
        assert info.value.offset == len(raw) - 10

    @pytest.mark.parametrize("cut", [0, 5, 31])
    def test_truncated_header(self, saved, tmp_path, cut):
        _, path = saved
        bad = tmp_path / "h.sglb"
        bad.write_bytes(path.read_bytes()[:cut])
        with pytest.raises(FormatError, match="header"):
            dsm.load_dataset(bad)

    def test_bad_magic(self, saved, tmp_path):
        _, path = saved
        bad = tmp_path / "m.sglb"
        bad.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(FormatError, match="magic") as info:
            dsm.load_dataset(bad)
        assert info.value.offset == 0

    def test_version_mismatch(self, saved, tmp_path):
        _, path = saved
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 2)
        bad = tmp_path / "v.sglb"
        bad.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedVersionError, match="version 2"):
            dsm.load_dataset(bad)

    def test_trailing_bytes(self, saved, tmp_path):
        _, path = saved
        bad = tmp_path / "x.sglb"
        bad.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(FormatError, match="trailing"):
            dsm.load_dataset(bad)

    def test_garbled_manifest(self, saved, tmp_path):
        _, path = saved
        raw = bytearray(path.read_bytes())
        raw[dsm.HEADER.size] = ord("#")
        bad = tmp_path / "j.sglb"
        bad.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="JSON"):
            dsm.load_dataset(bad)

    def test_label_out_of_range(self, saved, tmp_path):
        _, path = saved
        raw = bytearray(path.read_bytes())
        _, _, _, _, _, _, manifest_len = dsm.HEADER.unpack_from(raw)
        raw[dsm.HEADER.size + manifest_len] = 9
        bad = tmp_path / "l.sglb"
        bad.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="label"):
            dsm.load_dataset(bad)


class TestContainer:
    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            dsm.Dataset(np.zeros((3, 2, 4)), np.zeros(2), ["a"])

    def test_label_range(self):
        with pytest.raises(ContractError):
            dsm.Dataset(np.zeros((2, 2, 4)), [0, 1], ["a"])

    def test_subset_and_concat(self):
        ds = make_dataset()
        parts = ds.subset([0, 1, 2]).concat(ds.subset(np.arange(3, 12)))
        np.testing.assert_array_equal(parts.data, ds.data)
        np.testing.assert_array_equal(parts.provenance, ds.provenance)
