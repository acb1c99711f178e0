"""Tensor archive format, dataset manifests, splits and the synthetic fixture.

Archive binary layout (little-endian throughout):

    magic   4 bytes  "OVMA"
    version u32      1
    count   u32      number of tensors
    per tensor:
        name_len u16, name UTF-8 bytes
        dtype    u8   (0 = float32, the only defined code)
        ndim     u8
        dims     ndim * u32
        payload  row-major float32

Round trips are bit-exact. The manifest is UTF-8 JSON with top-level keys
"version", "d", "classes" (plus a free-form "provenance" note); each class
entry names the archive keys of its exemplar features, text token
embeddings and optional target features.
"""

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import (
    ArchiveFormatError,
    DegenerateInputError,
    ValidationError,
)

MAGIC = b"OVMA"
ARCHIVE_VERSION = 1
MANIFEST_VERSION = 1
DTYPE_F32 = 0


def _atomic_write(path, payload):
    """Write bytes to path via a temp file + rename in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_archive(path, tensors):
    """Serialize named float tensors; names must be unique and non-empty."""
    names = list(tensors.keys())
    if len(set(names)) != len(names):
        raise ValidationError("archive tensor names must be unique")
    chunks = [MAGIC, struct.pack("<II", ARCHIVE_VERSION, len(names))]
    for name in names:
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype=np.float32))
        encoded = name.encode("utf-8")
        if not encoded or len(encoded) > 0xFFFF:
            raise ValidationError(f"bad tensor name {name!r}")
        if arr.ndim > 255:
            raise ValidationError("tensor rank exceeds format limit")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f4", copy=False).tobytes())
    _atomic_write(path, b"".join(chunks))


def read_archive(path):
    """Parse an archive back into {name: float32 array}; bit-exact round trip."""
    with open(path, "rb") as fh:
        buf = fh.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(buf):
            raise ArchiveFormatError(f"truncated while reading {what}", offset=off)
        piece = buf[off : off + n]
        off += n
        return piece

    if take(4, "magic") != MAGIC:
        raise ArchiveFormatError("bad magic", offset=0)
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != ARCHIVE_VERSION:
        raise ArchiveFormatError(f"unsupported version {version}", offset=4)
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        if name in tensors:
            raise ArchiveFormatError(f"duplicate tensor name {name!r}", offset=off)
        dtype_code, ndim = struct.unpack("<BB", take(2, "dtype/ndim"))
        if dtype_code != DTYPE_F32:
            raise ArchiveFormatError(f"unknown dtype code {dtype_code}", offset=off - 2)
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "dims"))
        n_elements = 1
        for dim in dims:
            n_elements *= dim
        payload = take(4 * n_elements, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if off != len(buf):
        raise ArchiveFormatError("trailing bytes after last tensor", offset=off)
    return tensors


@dataclass
class ManifestClass:
    id: int
    name: str
    exemplar_key: str
    text_key: str
    target_key: str | None = None
    split: str = "base"


@dataclass
class DatasetManifest:
    d: int
    classes: list
    provenance: str = ""
    version: int = MANIFEST_VERSION

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        if len(set(ids)) != len(ids):
            raise ValidationError("class ids must be unique")

    def to_json(self):
        return json.dumps(
            {
                "version": self.version,
                "d": self.d,
                "provenance": self.provenance,
                "classes": [
                    {
                        "id": c.id,
                        "name": c.name,
                        "split": c.split,
                        "exemplar_key": c.exemplar_key,
                        "text_key": c.text_key,
                        "target_key": c.target_key,
                    }
                    for c in self.classes
                ],
            },
            indent=2,
        )

    @staticmethod
    def from_json(text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"manifest is not valid JSON: {exc}") from exc
        for key in ("version", "d", "classes"):
            if key not in raw:
                raise ValidationError(f"manifest missing key {key!r}")
        if raw["version"] != MANIFEST_VERSION:
            raise ValidationError(f"unsupported manifest version {raw['version']}")
        classes = []
        for entry in raw["classes"]:
            classes.append(
                ManifestClass(
                    id=int(entry["id"]),
                    name=str(entry.get("name", entry["id"])),
                    split=str(entry.get("split", "base")),
                    exemplar_key=str(entry["exemplar_key"]),
                    text_key=str(entry["text_key"]),
                    target_key=entry.get("target_key"),
                )
            )
        return DatasetManifest(
            d=int(raw["d"]),
            classes=classes,
            provenance=str(raw.get("provenance", "")),
        )


def save_manifest(path, manifest):
    _atomic_write(path, manifest.to_json().encode("utf-8"))


def load_manifest(path):
    with open(path, "r", encoding="utf-8") as fh:
        return DatasetManifest.from_json(fh.read())


@dataclass
class ClassReferenceSet:
    """Materialized per-class view: unit-norm features plus raw text tokens."""

    class_id: int
    name: str
    exemplars: np.ndarray | None
    text_tokens: np.ndarray | None
    targets: np.ndarray | None = None
    split: str = "base"


def _normalize_rows(arr, what):
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if (norms == 0).any():
        raise DegenerateInputError(f"{what} contains a zero row")
    return (arr / norms).astype(np.float32)


def load_references(manifest, tensors):
    """Resolve manifest keys against archive tensors, sorted by class id.

    Exemplar and target features are L2-normalized here; text token
    embeddings are taken as stored. Raises ValidationError when a key is
    missing or widths disagree with the manifest d.
    """
    refs = []
    for c in sorted(manifest.classes, key=lambda c: c.id):
        def fetch(key, what, required=True):
            if key is None:
                if required:
                    raise ValidationError(f"class {c.id} lacks a {what} key")
                return None
            if key not in tensors:
                raise ValidationError(f"class {c.id}: key {key!r} not in archive")
            arr = tensors[key]
            if arr.ndim != 2 or arr.shape[1] != manifest.d:
                raise ValidationError(
                    f"class {c.id}: tensor {key!r} has shape {arr.shape}, expected (*, {manifest.d})"
                )
            if not np.isfinite(arr).all():
                raise ValidationError(f"class {c.id}: tensor {key!r} has non-finite entries")
            return arr
        exemplars = fetch(c.exemplar_key, "exemplar")
        text = fetch(c.text_key, "text token")
        targets = fetch(c.target_key, "target", required=False)
        refs.append(
            ClassReferenceSet(
                class_id=c.id,
                name=c.name,
                exemplars=_normalize_rows(exemplars, f"class {c.id} exemplars"),
                text_tokens=text,
                targets=None if targets is None else _normalize_rows(targets, f"class {c.id} targets"),
                split=c.split,
            )
        )
    return refs


def generate_fixture(
    seed,
    num_classes,
    d,
    shots,
    text_ambiguity_fraction=0.0,
    noise_sigma=0.3,
    targets_per_class=32,
):
    """Synthetic dataset: noisy unit-norm features around class prototypes.

    Per class: ``shots`` exemplar-pool rows and ``targets_per_class``
    held-out target rows, each prototype + gaussian(sigma) renormalized,
    plus a short text token sequence derived from the prototype. A
    text_ambiguity_fraction of classes (rounded down to an even count) have
    their text swapped pairwise with another class, modeling descriptions
    that point at the wrong category. Returns (manifest, tensors).
    """
    if num_classes < 2:
        raise ValidationError("fixture needs at least 2 classes")
    if shots < 2:
        raise ValidationError("fixture needs at least 2 shots per class")
    if not 0.0 <= text_ambiguity_fraction <= 1.0:
        raise ValidationError(
            f"text ambiguity fraction must be in [0, 1], got {text_ambiguity_fraction}"
        )
    if noise_sigma < 0:
        raise ValidationError("noise sigma must be non-negative")
    rng = np.random.default_rng(seed)
    prototypes = _normalize_rows(rng.normal(size=(num_classes, d)), "prototypes")
    tensors = {"prototypes": prototypes}
    texts = []
    classes = []
    for i in range(num_classes):
        proto = prototypes[i]
        exemplars = proto + noise_sigma * rng.normal(size=(shots, d))
        targets = proto + noise_sigma * rng.normal(size=(targets_per_class, d))
        n_text = 4 + i % 3
        text = proto + 0.25 * rng.normal(size=(n_text, d))
        tensors[f"cls{i}.exemplars"] = _normalize_rows(exemplars, "exemplars")
        tensors[f"cls{i}.targets"] = _normalize_rows(targets, "targets")
        texts.append(_normalize_rows(text, "text tokens"))
        classes.append(
            ManifestClass(
                id=i,
                name=f"class_{i:03d}",
                exemplar_key=f"cls{i}.exemplars",
                text_key=f"cls{i}.text",
                target_key=f"cls{i}.targets",
            )
        )
    n_ambiguous = int(math.floor(text_ambiguity_fraction * num_classes))
    n_ambiguous -= n_ambiguous % 2
    for a in range(0, n_ambiguous, 2):
        texts[a], texts[a + 1] = texts[a + 1], texts[a]
    for i in range(num_classes):
        tensors[f"cls{i}.text"] = texts[i]
    manifest = DatasetManifest(
        d=d,
        classes=classes,
        provenance=(
            f"synthetic fixture: seed={seed} classes={num_classes} d={d} shots={shots} "
            f"ambiguity={text_ambiguity_fraction} sigma={noise_sigma}"
        ),
    )
    return manifest, tensors


def split_base_novel(manifest, fraction):
    """First ceil(fraction * C) class ids (sorted) become base, the rest novel."""
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"split fraction must be in (0, 1), got {fraction}")
    ordered = sorted(manifest.classes, key=lambda c: c.id)
    n_base = math.ceil(fraction * len(ordered))
    if n_base == 0 or n_base == len(ordered):
        raise ValidationError("split leaves one side empty")

    def clone(c, split):
        return ManifestClass(
            id=c.id,
            name=c.name,
            exemplar_key=c.exemplar_key,
            text_key=c.text_key,
            target_key=c.target_key,
            split=split,
        )

    base = DatasetManifest(
        d=manifest.d,
        classes=[clone(c, "base") for c in ordered[:n_base]],
        provenance=manifest.provenance,
    )
    novel = DatasetManifest(
        d=manifest.d,
        classes=[clone(c, "novel") for c in ordered[n_base:]],
        provenance=manifest.provenance,
    )
    return base, novel
