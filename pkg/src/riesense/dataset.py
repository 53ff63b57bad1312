"""In-memory dataset container and the SGLB binary file format.

SGLB layout (little-endian)::

    magic        4s   b"SGLB"
    version      u32  1
    channels     u32
    timesteps    u32
    samples      u64
    classes      u32
    manifest_len u32  length of the UTF-8 JSON manifest that follows
    manifest     bytes
    per sample:  label u8, domain u8, provenance u8,
                 channels * timesteps float32 payload (row-major)

Samples are held as float64 in memory and written as float32, so a save/load
cycle returns the float32-rounded payload and further cycles are bit-exact.
"""

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, UnsupportedVersionError

MAGIC = b"SGLB"
VERSION = 1
HEADER = struct.Struct("<4sIIIQII")

DOMAIN_SOURCE = 0
DOMAIN_SHIFTED = 1
DOMAIN_NAMES = {DOMAIN_SOURCE: "source", DOMAIN_SHIFTED: "shifted"}

ORIGINAL = 0
PERTURBED = 1
INTERPOLATED = 2
JITTERED = 3
PROVENANCE_NAMES = {ORIGINAL: "original", PERTURBED: "perturbed", INTERPOLATED: "interpolated", JITTERED: "jittered"}


@dataclass
class Dataset:
    data: np.ndarray
    labels: np.ndarray
    class_names: list
    seed: int = 0
    domains: np.ndarray = None
    provenance: np.ndarray = None
    stats: dict = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if self.data.ndim != 3 or self.data.shape[0] != n:
            raise ContractError(f"data shape {self.data.shape} does not match {n} labels")
        if self.domains is None:
            self.domains = np.full(n, DOMAIN_SOURCE, dtype=np.uint8)
        if self.provenance is None:
            self.provenance = np.full(n, ORIGINAL, dtype=np.uint8)
        self.domains = np.asarray(self.domains, dtype=np.uint8)
        self.provenance = np.asarray(self.provenance, dtype=np.uint8)
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ContractError("labels outside the class range")

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def shape(self):
        return self.data.shape[1:]

    def subset(self, index):
        index = np.asarray(index)
        return replace(
            self,
            data=self.data[index],
            labels=self.labels[index],
            domains=self.domains[index],
            provenance=self.provenance[index],
        )

    def concat(self, other):
        if other.shape != self.shape or other.class_names != self.class_names:
            raise ContractError("datasets differ in shape or classes")
        return replace(
            self,
            data=np.concatenate([self.data, other.data]),
            labels=np.concatenate([self.labels, other.labels]),
            domains=np.concatenate([self.domains, other.domains]),
            provenance=np.concatenate([self.provenance, other.provenance]),
        )

    def counts(self):
        """Sample counts per class name, split by domain tag."""
        out = {}
        for k, name in enumerate(self.class_names):
            mask = self.labels == k
            out[name] = {
                DOMAIN_NAMES[d]: int(np.sum(mask & (self.domains == d))) for d in DOMAIN_NAMES
            }
        return out

    def manifest(self):
        return {
            "format_version": VERSION,
            "class_names": list(self.class_names),
            "shape": list(self.shape),
            "counts": self.counts(),
            "seed": int(self.seed),
            "standardization": self.stats,
            "synthetic": int(np.sum(self.provenance != ORIGINAL)),
            "extra": self.extra,
        }


def save_dataset(dataset, path):
    path = Path(path)
    channels, timesteps = dataset.shape
    manifest = json.dumps(dataset.manifest(), sort_keys=True).encode("utf-8")
    n = len(dataset)
    record = np.zeros(
        n, dtype=[("label", "u1"), ("domain", "u1"), ("prov", "u1"), ("x", "<f4", (channels * timesteps,))]
    )
    record["label"] = dataset.labels
    record["domain"] = dataset.domains
    record["prov"] = dataset.provenance
    record["x"] = dataset.data.reshape(n, channels * timesteps)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, channels, timesteps, n, dataset.num_classes, len(manifest)))
        fh.write(manifest)
        fh.write(record.tobytes())
    return path


def load_dataset(path):
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError("file shorter than the SGLB header", offset=len(raw))
    magic, version, channels, timesteps, n, classes, manifest_len = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported SGLB version {version}", offset=4)
    start = HEADER.size
    end = start + manifest_len
    if len(raw) < end:
        raise FormatError("truncated manifest", offset=len(raw))
    try:
        manifest = json.loads(raw[start:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}", offset=start) from None
    dtype = np.dtype([("label", "u1"), ("domain", "u1"), ("prov", "u1"), ("x", "<f4", (channels * timesteps,))])
    expected = end + n * dtype.itemsize
    if len(raw) < expected:
        sample = (len(raw) - end) // dtype.itemsize
        raise FormatError(f"truncated payload in sample {sample} of {n}", offset=len(raw))
    if len(raw) > expected:
        raise FormatError("trailing bytes after the last sample", offset=expected)
    record = np.frombuffer(raw, dtype=dtype, count=n, offset=end)
    class_names = manifest.get("class_names", [str(k) for k in range(classes)])
    if len(class_names) != classes:
        raise FormatError("manifest class names disagree with header class count", offset=start)
    if n and int(record["label"].max()) >= classes:
        raise FormatError("sample label outside class range", offset=end)
    dataset = Dataset(
        data=record["x"].astype(np.float64).reshape(n, channels, timesteps),
        labels=record["label"].astype(np.int64),
        class_names=class_names,
        seed=manifest.get("seed", 0),
        domains=record["domain"].copy(),
        provenance=record["prov"].copy(),
        stats=manifest.get("standardization"),
        extra=manifest.get("extra", {}),
    )
    if manifest.get("counts") is not None and manifest["counts"] != dataset.counts():
        raise FormatError("manifest counts do not match the payload", offset=start)
    return dataset
