"""Feature files, dataset manifests, deterministic batching and the synthetic generator.

Feature file layout (little-endian)::

    offset  size  field
    0       4     magic b"HCFD"
    4       4     format version (uint32, currently 1)
    8       4     T, number of frames (uint32)
    12      4     D, feature dimension (uint32)
    16      4*T*D float32 payload, frame-major

The manifest is a tab-separated file with the header ``id path label split group``;
``path`` is relative to the manifest's directory.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SynthConfig
from .errors import ConfigError, FormatError, StructuralError
from .model import Item

log = logging.getLogger(__name__)

MAGIC = b"HCFD"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIII")
LABELS = ("real", "fake")
SPLITS = ("train", "dev", "test")
MANIFEST_FIELDS = ("id", "path", "label", "split", "group")
MANIFEST_NAME = "manifest.tsv"


@dataclass
class FeatureSequence:
    uid: str
    features: np.ndarray  # (T, D) float32
    label: str = "real"
    split: str = "train"


def write_feature_file(features, path) -> None:
    x = np.asarray(features)
    if x.ndim != 2 or x.shape[0] < 1:
        raise StructuralError(f"features must be (T >= 1, D), got shape {x.shape}")
    x = np.ascontiguousarray(x, dtype="<f4")
    if not np.all(np.isfinite(x)):
        raise FormatError("feature values must be finite")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, x.shape[0], x.shape[1]))
        fh.write(x.tobytes(order="C"))


def read_feature_file(path) -> np.ndarray:
    """Return the (T, D) float32 matrix stored at ``path``."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: truncated header at byte {len(raw)} (need {HEADER.size})")
    magic, version, T, D = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    if T < 1:
        raise FormatError(f"{path}: T must be >= 1 (byte 8)")
    expected = T * D * 4
    actual = len(raw) - HEADER.size
    if actual != expected:
        raise FormatError(f"{path}: payload length mismatch at byte {HEADER.size}: "
                          f"expected {expected} bytes, found {actual}")
    x = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(T, D)
    if not np.all(np.isfinite(x)):
        raise FormatError(f"{path}: non-finite feature values")
    return x.astype(np.float32)


# -- manifest -----------------------------------------------------------------------


@dataclass(frozen=True)
class Entry:
    uid: str
    path: str
    label: str
    split: str
    group: str


class Manifest:
    def __init__(self, entries, root="."):
        self.entries = list(entries)
        self.root = Path(root)
        seen = set()
        for e in self.entries:
            if e.uid in seen:
                raise FormatError(f"duplicate utterance id {e.uid!r}")
            seen.add(e.uid)
            if e.label not in LABELS:
                raise FormatError(f"{e.uid}: label must be real or fake, got {e.label!r}")
            if e.split not in SPLITS:
                raise FormatError(f"{e.uid}: split must be one of {SPLITS}, got {e.split!r}")

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh, delimiter="\t")
                if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
                    raise FormatError(f"{path}: header must be {' '.join(MANIFEST_FIELDS)}")
                entries = [Entry(r["id"], r["path"], r["label"], r["split"], r["group"]) for r in reader]
        except OSError as exc:
            raise FormatError(f"cannot read manifest {path}: {exc}") from exc
        return cls(entries, path.parent)

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(MANIFEST_FIELDS)
            for e in self.entries:
                w.writerow([e.uid, e.path, e.label, e.split, e.group])

    def splits(self) -> list[str]:
        return [s for s in SPLITS if any(e.split == s for e in self.entries)]

    def split(self, name: str) -> list[Entry]:
        if name not in SPLITS:
            raise StructuralError(f"unknown split {name!r}; expected one of {', '.join(SPLITS)}")
        rows = [e for e in self.entries if e.split == name]
        if not rows:
            raise StructuralError(f"split {name!r} is empty; available splits: {', '.join(self.splits())}")
        return rows

    def load_items(self, split: str) -> list[Item]:
        return [Item(e.uid, read_feature_file(self.root / e.path).astype(np.float64),
                     e.label == "fake", e.group) for e in self.split(split)]

    def check_groups_disjoint(self) -> None:
        # Splits should not share groups of speakers; only warn, generator modes legitimately repeat.
        by_split = {s: {e.group for e in self.entries if e.split == s} for s in self.splits()}
        names = list(by_split)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                shared = by_split[a] & by_split[b]
                if shared:
                    log.debug("splits %s and %s share group tags %s", a, b, sorted(shared)[:5])


def require_both_classes(items: list[Item], split: str) -> None:
    kinds = {it.is_fake for it in items}
    if kinds != {True, False}:
        raise ConfigError(f"split {split!r} must contain both real and fake utterances")


def batch_iter(items: list, batch_size: int, seed: int, epoch: int):
    """Yield batches from a permutation fixed by ``(seed, epoch)``; the last batch may be short."""
    if not items:
        raise StructuralError("cannot batch an empty split")
    order = np.random.default_rng([seed, epoch]).permutation(len(items))
    for start in range(0, len(items), batch_size):
        yield [items[i] for i in order[start:start + batch_size]]


# -- synthetic generator -----------------------------------------------------------------


def mode_directions(config: SynthConfig) -> np.ndarray:
    """Orthonormal artifact directions, one row per fake mode."""
    rng = np.random.default_rng([config.seed, 0xD1])
    q, _ = np.linalg.qr(rng.standard_normal((config.input_dim, config.n_modes)))
    return q.T


def synth_utterance(config: SynthConfig, rng: np.random.Generator, mode: int | None,
                    directions: np.ndarray) -> np.ndarray:
    """Smoothed Gaussian frames; fakes get ``strength * direction[mode]`` on a random frame subset."""
    T = int(rng.integers(config.min_frames, config.max_frames + 1))
    w = config.smoothing_window
    raw = rng.normal(0.0, config.noise_std, size=(T + w - 1, config.input_dim))
    kernel = np.full(w, 1.0 / w)
    x = np.stack([np.convolve(raw[:, j], kernel, mode="valid") for j in range(config.input_dim)], axis=1)
    if mode is not None and config.artifact_fraction > 0.0:
        n_art = max(1, int(round(config.artifact_fraction * T)))
        frames = rng.choice(T, size=n_art, replace=False)
        x[frames] += config.artifact_strength * directions[mode]
    return x


def generate_synthetic(config: SynthConfig, out_dir) -> Manifest:
    """Write feature files plus ``manifest.tsv`` under ``out_dir``; a pure function of the config."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    directions = mode_directions(config)
    entries = []
    for split_idx, split in enumerate(SPLITS):
        n = int(config.counts.get(split, 0))
        n_fake = int(round(config.fake_ratio * n))
        labels = ["fake"] * n_fake + ["real"] * (n - n_fake)
        order = np.random.default_rng([config.seed, split_idx, 0xAB]).permutation(n)
        for i in range(n):
            label = labels[order[i]]
            rng = np.random.default_rng([config.seed, split_idx, i])
            mode = int(rng.integers(config.n_modes)) if label == "fake" else None
            x = synth_utterance(config, rng, mode, directions)
            uid = f"{split}-{i:05d}"
            rel = f"features/{uid}.hcfd"
            write_feature_file(x, out / rel)
            group = f"mode{mode + 1}" if mode is not None else "real"
            entries.append(Entry(uid, rel, label, split, group))
    manifest = Manifest(entries, out)
    manifest.save(out / MANIFEST_NAME)
    return manifest
