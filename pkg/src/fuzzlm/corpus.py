"""Seed-corpus preprocessing: object extraction, binary substitution, splits, windowing.

The preprocessing pipeline turns a pile of seed files into training material
for the character-level model:

1. ``extract_objects``     -- pull ``N G obj ... endobj`` spans out of raw bytes.
2. ``tokenize_binary``     -- replace each stream body with the binary token (BT),
                              stashing the original bytes in a ``BinaryPartStore``.
3. ``build_corpus``        -- append the end token (ET) where missing, shuffle
                              deterministically, split train/validation/test and
                              concatenate each split into one byte sequence.
4. ``window``              -- cut a sequence into fixed-length supervised examples
                              (d-symbol window, next symbol as label).

On disk a corpus lives in a *bundle* directory:

    train.bin / validation.bin / test.bin   raw split sequences
    parts.bin                               length-prefixed binary parts:
                                            repeated [u32 part_id][u32 len][bytes]
    manifest.json                           vocabulary, token strings, counts,
                                            split seed/ratios, part origins
"""

from __future__ import annotations

import json
import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, StreamTokenizeError

logger = logging.getLogger(__name__)

OBJECT_PATTERN = re.compile(rb"\b(\d+)[ \t\r\n]+(\d+)[ \t\r\n]+obj\b", re.DOTALL)
STREAM_KEYWORD = re.compile(rb"stream(\r\n|\r|\n)")
ENDSTREAM_KEYWORD = b"endstream"

_ASCII_LETTERS = frozenset(b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ")
_EOL_BYTES = frozenset(b"\r\n")

MANIFEST_NAME = "manifest.json"
BUNDLE_FORMAT = "fuzzlm-corpus"
BUNDLE_VERSION = 1


class SymbolVocabulary:
    """Bijection between the byte values occurring in a corpus and [0, V).

    Symbols are single byte values, kept in ascending order so the mapping is
    deterministic for a given corpus.
    """

    def __init__(self, symbols):
        symbols = tuple(int(s) for s in symbols)
        if len(set(symbols)) != len(symbols):
            raise ContractViolation("duplicate symbols in vocabulary")
        if any(not 0 <= s <= 255 for s in symbols):
            raise ContractViolation("symbols must be byte values")
        self.symbols = symbols
        self._index = np.full(256, -1, dtype=np.int32)
        for i, s in enumerate(symbols):
            self._index[s] = i

    @classmethod
    def from_sequences(cls, *sequences: bytes) -> "SymbolVocabulary":
        present = set()
        for seq in sequences:
            present.update(seq)
        return cls(sorted(present))

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, byte_value: int) -> bool:
        return self._index[byte_value] >= 0

    def __eq__(self, other) -> bool:
        return isinstance(other, SymbolVocabulary) and self.symbols == other.symbols

    def index_of(self, byte_value: int) -> int:
        idx = int(self._index[byte_value])
        if idx < 0:
            raise ContractViolation(f"byte {byte_value!r} not in vocabulary")
        return idx

    def encode(self, data: bytes) -> np.ndarray:
        arr = np.frombuffer(data, dtype=np.uint8)
        out = self._index[arr]
        if out.size and out.min() < 0:
            bad = int(arr[np.argmin(out)])
            raise ContractViolation(f"byte {bad!r} not in vocabulary")
        return out

    def decode(self, indices) -> bytes:
        indices = np.asarray(indices)
        if indices.size and (indices.min() < 0 or indices.max() >= len(self.symbols)):
            raise ContractViolation("symbol index out of range")
        table = np.array(self.symbols, dtype=np.uint8)
        return table[indices].tobytes()


@dataclass
class BinaryPartStore:
    """Extracted stream bodies, kept verbatim for later re-insertion."""

    parts: list[tuple[int, bytes]] = field(default_factory=list)
    origin: dict[int, tuple[int, int]] = field(default_factory=dict)

    def add(self, data: bytes, source_object: int, position: int) -> int:
        if not data:
            raise ContractViolation("binary parts must be non-empty")
        part_id = len(self.parts)
        self.parts.append((part_id, data))
        self.origin[part_id] = (source_object, position)
        return part_id

    def __len__(self) -> int:
        return len(self.parts)

    def get(self, part_id: int) -> bytes:
        return self.parts[part_id][1]


@dataclass
class PreprocessedCorpus:
    """Split corpus sequences plus everything needed to finalize generated data."""

    train: bytes
    validation: bytes
    test: bytes
    et: bytes
    bt: bytes
    store: BinaryPartStore
    vocabulary: SymbolVocabulary

    def split(self, name: str) -> bytes:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]


class WindowedDataset:
    """Supervised (window, next symbol) examples cut from one sequence.

    For a 0-based sequence S, example i is (S[i*j : i*j+d], S[i*j+d]); the
    count is floor((|S|-1-d)/j)+1 when |S| >= d+1 and 0 otherwise.  Windows are
    materialized lazily; ``batch`` gathers many at once for training.
    """

    def __init__(self, sequence, d: int, j: int):
        if d < 1 or j < 1:
            raise ContractViolation("window length and jump step must be >= 1")
        if isinstance(sequence, (bytes, bytearray)):
            sequence = np.frombuffer(bytes(sequence), dtype=np.uint8)
        self.sequence = np.ascontiguousarray(sequence)
        self.d = d
        self.j = j
        n = len(self.sequence)
        self._count = 0 if n < d + 1 else (n - 1 - d) // j + 1

    def __len__(self) -> int:
        return self._count

    def example(self, i: int) -> tuple[np.ndarray, int]:
        if not 0 <= i < self._count:
            raise IndexError(i)
        start = i * self.j
        return self.sequence[start : start + self.d], int(self.sequence[start + self.d])

    def __iter__(self):
        return (self.example(i) for i in range(self._count))

    @property
    def labels(self) -> np.ndarray:
        starts = np.arange(self._count, dtype=np.int64) * self.j
        return self.sequence[starts + self.d]

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """Gather windows and labels for the given example indices."""
        indices = np.asarray(indices, dtype=np.int64)
        starts = indices * self.j
        windows = self.sequence[starts[:, None] + np.arange(self.d)]
        return windows, self.sequence[starts + self.d]


def window(sequence, d: int, j: int) -> WindowedDataset:
    """Cut ``sequence`` into length-d windows advancing by j symbols."""
    return WindowedDataset(sequence, d, j)


def extract_objects(pdf_bytes: bytes) -> list[bytes]:
    """Return every maximal ``N G obj ... endobj`` span, in file order.

    Spans are non-overlapping; each ends at the first ``endobj`` keyword after
    its header.  A byte stream with no objects yields an empty list.
    """
    spans = []
    pos = 0
    while True:
        m = OBJECT_PATTERN.search(pdf_bytes, pos)
        if m is None:
            break
        end = pdf_bytes.find(b"endobj", m.end())
        if end < 0:
            break
        end += len(b"endobj")
        spans.append(pdf_bytes[m.start() : end])
        pos = end
    return spans


def find_binary_markers(data: bytes, bt: bytes) -> list[int]:
    """Positions of freestanding BT markers in ``data``.

    An occurrence of ``bt`` counts as a marker only when it is not immediately
    preceded by an ASCII letter (which would make it the tail of a longer
    keyword such as ``endstream``) and not immediately followed by an
    end-of-line byte (which is how the ``stream`` keyword that opens a stream
    section appears).  The scan is left-to-right and non-overlapping.
    """
    positions = []
    pos = 0
    while True:
        hit = data.find(bt, pos)
        if hit < 0:
            break
        before_ok = hit == 0 or data[hit - 1] not in _ASCII_LETTERS
        after = hit + len(bt)
        after_ok = after >= len(data) or data[after] not in _EOL_BYTES
        if before_ok and after_ok:
            positions.append(hit)
            pos = after
        else:
            pos = hit + 1
    return positions


def tokenize_binary(object_text: bytes, bt: bytes) -> tuple[bytes, list[bytes]]:
    """Replace each stream body in one object span with the BT token.

    The replaced region is everything strictly between the ``stream`` keyword
    plus its end-of-line and the matching ``endstream`` keyword (including any
    end-of-line that precedes ``endstream``).  Returns the substituted text and
    the extracted parts in order; ``reassemble`` undoes the substitution
    byte-for-byte.

    Raises ``StreamTokenizeError`` when a ``stream`` keyword has no matching
    ``endstream``.
    """
    out = bytearray()
    parts = []
    pos = 0
    while True:
        m = STREAM_KEYWORD.search(object_text, pos)
        # Skip matches that are the tail of "endstream".
        while m is not None and m.start() > 0 and object_text[m.start() - 1] in _ASCII_LETTERS:
            m = STREAM_KEYWORD.search(object_text, m.start() + 1)
        if m is None:
            out += object_text[pos:]
            break
        body_start = m.end()
        end = object_text.find(ENDSTREAM_KEYWORD, body_start)
        if end < 0:
            raise StreamTokenizeError("stream keyword without endstream", m.start())
        part = object_text[body_start:end]
        out += object_text[pos:body_start]
        if part:
            parts.append(part)
            out += bt
        pos = end
    return bytes(out), parts


def reassemble(tokenized: bytes, parts: list[bytes], bt: bytes) -> bytes:
    """Re-insert extracted parts at BT marker positions (round-trip check)."""
    markers = find_binary_markers(tokenized, bt)
    if len(markers) != len(parts):
        raise ContractViolation(
            f"{len(markers)} BT markers but {len(parts)} recorded parts"
        )
    out = bytearray()
    pos = 0
    for marker, part in zip(markers, parts):
        out += tokenized[pos:marker]
        out += part
        pos = marker + len(bt)
    out += tokenized[pos:]
    return bytes(out)


def split_counts(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Number of objects per split: floor for train and validation, rest test."""
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    return n_train, n_val, n - n_train - n_val


def build_corpus(
    objects: list[bytes],
    et: bytes,
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    *,
    bt: bytes = b"stream",
    store: BinaryPartStore | None = None,
) -> PreprocessedCorpus:
    """Shuffle objects deterministically, split by ratio, concatenate each split.

    ET is appended to every object that does not already end with it, so each
    object's contribution ends with exactly one ET occurrence.  Objects that
    contain ET elsewhere are kept with a warning (some formats carry a natural
    end token).
    """
    if any(r <= 0 for r in split_ratios):
        raise ContractViolation("split ratios must be positive")
    if abs(sum(split_ratios) - 1.0) > 1e-9:
        raise ContractViolation("split ratios must sum to 1")
    if len(objects) < 3:
        raise ContractViolation("need at least 3 objects to build a corpus")
    if not et:
        raise ContractViolation("end token must be non-empty")

    terminated = []
    for i, obj in enumerate(objects):
        if obj.endswith(et):
            terminated.append(obj)
        else:
            if et in obj:
                logger.warning("object %d contains the end token mid-sequence", i)
            terminated.append(obj + et)

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(terminated))
    n_train, n_val, _ = split_counts(len(terminated), split_ratios)

    def concat(idx) -> bytes:
        return b"".join(terminated[i] for i in idx)

    train = concat(order[:n_train])
    validation = concat(order[n_train : n_train + n_val])
    test = concat(order[n_train + n_val :])
    vocabulary = SymbolVocabulary.from_sequences(train, validation, test)
    return PreprocessedCorpus(
        train=train,
        validation=validation,
        test=test,
        et=et,
        bt=bt,
        store=store if store is not None else BinaryPartStore(),
        vocabulary=vocabulary,
    )


@dataclass
class PreprocessResult:
    corpus: PreprocessedCorpus
    object_count: int
    dropped_objects: int


def preprocess_objects(
    raw_objects: list[bytes],
    *,
    et: bytes = b"endobj",
    bt: bytes = b"stream",
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> PreprocessResult:
    """Tokenize binary parts of each object, drop failures, build the corpus."""
    store = BinaryPartStore()
    tokenized = []
    dropped = 0
    for i, obj in enumerate(raw_objects):
        try:
            text, parts = tokenize_binary(obj, bt)
        except StreamTokenizeError as exc:
            logger.warning("dropping object %d: %s", i, exc)
            dropped += 1
            continue
        for marker, part in zip(find_binary_markers(text, bt), parts):
            store.add(part, i, marker)
        tokenized.append(text)
    corpus = build_corpus(tokenized, et, split_ratios, seed, bt=bt, store=store)
    return PreprocessResult(corpus, object_count=len(tokenized), dropped_objects=dropped)


def preprocess_files(
    paths: list[Path],
    *,
    et: bytes = b"endobj",
    bt: bytes = b"stream",
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> PreprocessResult:
    """Extract objects from seed files (sorted by path) and preprocess them."""
    raw_objects = []
    for path in sorted(paths):
        raw_objects.extend(extract_objects(Path(path).read_bytes()))
    return preprocess_objects(
        raw_objects, et=et, bt=bt, split_ratios=split_ratios, seed=seed
    )


def save_bundle(
    result: PreprocessResult,
    out_dir: Path,
    *,
    seed: int,
    split_ratios: tuple[float, float, float],
) -> Path:
    """Write a corpus bundle directory (sequences, part archive, manifest)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = result.corpus
    for name in ("train", "validation", "test"):
        (out_dir / f"{name}.bin").write_bytes(corpus.split(name))
    with open(out_dir / "parts.bin", "wb") as fh:
        for part_id, data in corpus.store.parts:
            fh.write(struct.pack("<II", part_id, len(data)))
            fh.write(data)
    manifest = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "et": corpus.et.decode("latin-1"),
        "bt": corpus.bt.decode("latin-1"),
        "vocabulary": list(corpus.vocabulary.symbols),
        "split": {
            "seed": seed,
            "ratios": list(split_ratios),
            "sequence_lengths": {
                name: len(corpus.split(name)) for name in ("train", "validation", "test")
            },
        },
        "counts": {
            "objects": result.object_count,
            "dropped_objects": result.dropped_objects,
            "binary_parts": len(corpus.store),
        },
        "part_origins": [
            [part_id, origin[0], origin[1]]
            for part_id, origin in sorted(corpus.store.origin.items())
        ],
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return out_dir


def load_bundle(bundle_dir: Path) -> tuple[PreprocessedCorpus, dict]:
    """Read a bundle directory back into a ``PreprocessedCorpus`` plus manifest."""
    bundle_dir = Path(bundle_dir)
    manifest = json.loads((bundle_dir / MANIFEST_NAME).read_text())
    if manifest.get("format") != BUNDLE_FORMAT:
        raise ContractViolation(f"not a corpus bundle: {bundle_dir}")
    store = BinaryPartStore()
    origins = {pid: (obj, pos) for pid, obj, pos in manifest.get("part_origins", [])}
    raw = (bundle_dir / "parts.bin").read_bytes()
    pos = 0
    while pos < len(raw):
        part_id, length = struct.unpack_from("<II", raw, pos)
        pos += 8
        data = raw[pos : pos + length]
        pos += length
        origin = origins.get(part_id, (-1, -1))
        store.add(data, origin[0], origin[1])
    corpus = PreprocessedCorpus(
        train=(bundle_dir / "train.bin").read_bytes(),
        validation=(bundle_dir / "validation.bin").read_bytes(),
        test=(bundle_dir / "test.bin").read_bytes(),
        et=manifest["et"].encode("latin-1"),
        bt=manifest["bt"].encode("latin-1"),
        store=store,
        vocabulary=SymbolVocabulary(manifest["vocabulary"]),
    )
    return corpus, manifest
