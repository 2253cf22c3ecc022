"""On-disk formats: tensor dumps, token files, model directories, run manifests.

Tensor dump layout (all little-endian)::

    b"PODT" | u32 version (=1) | u32 ndim | ndim x u64 dims | float32 payload

Token files hold consecutive records, each a u32 count followed by that many
u32 token ids.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import ModelConfig, ModelWeights

MAGIC = b"PODT"
VERSION = 1


def encode_tensor(array) -> bytes:
    a = np.asarray(array)
    header = MAGIC + struct.pack("<II", VERSION, a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + np.ascontiguousarray(a, dtype="<f4").tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    """Parse a tensor dump into a float64 array; errors name the byte offset."""
    if len(data) < 12:
        raise FormatError(f"offset {len(data)}: truncated header, need 12 bytes, got {len(data)}")
    if data[:4] != MAGIC:
        raise FormatError(f"offset 0: bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, ndim = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"offset 4: unsupported version {version}")
    dims_end = 12 + 8 * ndim
    if len(data) < dims_end:
        raise FormatError(f"offset 12: truncated dims, need {dims_end} bytes, got {len(data)}")
    dims = struct.unpack_from(f"<{ndim}Q", data, 12)
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    actual = len(data) - dims_end
    if actual != expected:
        raise FormatError(f"offset {dims_end}: payload has {actual} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f4", offset=dims_end).reshape(dims).astype(np.float64)


def write_tensor(path, array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    try:
        return decode_tensor(path.read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def encode_tokens(samples) -> bytes:
    out = bytearray()
    for s in samples:
        s = np.asarray(s)
        out += struct.pack("<I", s.size)
        out += np.ascontiguousarray(s, dtype="<u4").tobytes()
    return bytes(out)


def decode_tokens(data: bytes) -> list[np.ndarray]:
    samples = []
    offset = 0
    while offset < len(data):
        if len(data) - offset < 4:
            raise FormatError(f"offset {offset}: truncated record length")
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if len(data) - offset < 4 * count:
            raise FormatError(f"offset {offset}: record needs {4 * count} bytes, {len(data) - offset} left")
        samples.append(np.frombuffer(data, dtype="<u4", count=count, offset=offset).astype(np.int64))
        offset += 4 * count
    return samples


def write_tokens(path, samples) -> None:
    Path(path).write_bytes(encode_tokens(samples))


def read_tokens(path) -> list[np.ndarray]:
    path = Path(path)
    try:
        return decode_tokens(path.read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def save_model(directory, weights: ModelWeights) -> None:
    """Write ``config.json`` and one tensor dump per weight under ``weights/``."""
    directory = Path(directory)
    (directory / "weights").mkdir(parents=True, exist_ok=True)
    (directory / "config.json").write_text(weights.config.to_json() + "\n")
    for name, array in weights.named_tensors().items():
        write_tensor(directory / "weights" / f"{name}.podt", array)


def load_model(directory) -> ModelWeights:
    directory = Path(directory)
    try:
        config = ModelConfig.from_json((directory / "config.json").read_text())
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{directory / 'config.json'}: {exc}") from None
    tensors = {p.name[:-len(".podt")]: read_tensor(p) for p in sorted((directory / "weights").glob("*.podt"))}
    try:
        return ModelWeights.from_named_tensors(config, tensors)
    except ValueError as exc:
        raise FormatError(f"{directory}: {exc}") from None


def model_digest(directory) -> str:
    """SHA-256 over the config and every weight file, in name order."""
    directory = Path(directory)
    h = hashlib.sha256()
    for p in [directory / "config.json", *sorted((directory / "weights").glob("*.podt"))]:
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


# manifest fields that must agree between inputs consumed by one command
IDENTITY_FIELDS = ("model_sha256", "corpus_seed", "corpus_samples", "corpus_seq_len", "q", "delta")


@dataclass(frozen=True)
class RunManifest:
    """Parameters of a pipeline run; stages fill in the fields they own."""

    model_config: str | None = None
    model_sha256: str | None = None
    corpus_seed: int | None = None
    corpus_samples: int | None = None
    corpus_seq_len: int | None = None
    q: int | None = None
    delta: float | None = None
    n_s: int | None = None
    n_r: int | None = None
    tau: float | None = None
    output_dir: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise FormatError(f"unknown manifest fields {sorted(unknown)}")
        return cls(**data)

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def merge(self, other: "RunManifest") -> "RunManifest":
        """Combine two input manifests, refusing if an identity field disagrees."""
        merged = {}
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if f.name in IDENTITY_FIELDS and a is not None and b is not None and a != b:
                raise FormatError(f"inputs come from different runs: {f.name} = {a!r} vs {b!r}")
            merged[f.name] = a if a is not None else b
        return RunManifest(**merged)

    def update(self, **changes) -> "RunManifest":
        return RunManifest(**{**self.to_dict(), **changes})


def stamp(payload: dict, manifest: RunManifest) -> dict:
    """Attach the manifest and its hash to an output document."""
    return {**payload, "manifest": manifest.to_dict(), "manifest_hash": manifest.digest()}


def read_stamped(path) -> tuple[dict, RunManifest]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    manifest = RunManifest.from_dict(doc.get("manifest", {}))
    if "manifest_hash" in doc and doc["manifest_hash"] != manifest.digest():
        raise FormatError(f"{path}: manifest hash does not match its manifest")
    return doc, manifest


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
