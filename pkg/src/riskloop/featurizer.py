"""Fixed-width featurization of case records.

Each case becomes one flat vector of 150 pair blocks, 33 entries per block:
32 projected event-embedding dimensions followed by one normalized timestamp.
Cases with fewer than 150 event-time pairs are zero-padded; longer cases keep
the earliest 150 pairs after time-sorting.  Total width: 150 x 33 = 4950.
"""

from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np

from .dataset import CaseRecord, canonical_events

EMBED_DIM = 768
EVENT_DIMS = 32
PAIR_CAP = 150
BLOCK = EVENT_DIMS + 1
TOTAL_DIMS = PAIR_CAP * BLOCK


class UnknownEventError(KeyError):
    """Event text absent from an error-policy embedding store."""


class StoreFormatError(ValueError):
    """Embedding store file is malformed."""


class InsufficientDataError(ValueError):
    """Normalizer fit requested with zero events."""


@functools.lru_cache(maxsize=65536)
def _hash_vector(text: str, dim: int) -> np.ndarray:
    """Deterministic unit-norm vector for an event text.

    A stable 64-bit digest of the text seeds a pseudorandom normal draw, so
    the same text maps to the same vector in every process.
    """
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    v.flags.writeable = False
    return v


@dataclass
class EmbeddingStore:
    """Event-text to vector lookup with a configurable fallback.

    ``hash`` policy synthesizes a deterministic unit vector for unseen text,
    so the pipeline runs with no embedding file at all; ``error`` policy
    raises, for runs that must stay faithful to a precomputed store.
    """

    dim: int = EMBED_DIM
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    fallback_policy: Literal["hash", "error"] = "hash"

    def lookup(self, text: str) -> np.ndarray:
        vec = self.entries.get(text)
        if vec is not None:
            return vec
        if self.fallback_policy == "hash":
            return _hash_vector(text, self.dim)
        raise UnknownEventError(f"no embedding for event text: {text!r}")


def embed_event(text: str, store: EmbeddingStore) -> np.ndarray:
    return store.lookup(text)


def _unescape(token: str) -> str:
    return token.replace("\\t", "\t").replace("\\n", "\n").replace("\\\\", "\\")


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def load_store(path: Union[str, Path], fallback_policy: str = "hash") -> EmbeddingStore:
    """Load the tab-separated embedding store format.

    First line ``dim <d>``; each following line is the escaped event text, a
    tab, then ``d`` space-separated floats.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("dim "):
        raise StoreFormatError("line 1: expected header 'dim <d>'")
    try:
        dim = int(lines[0].split()[1])
    except (IndexError, ValueError) as exc:
        raise StoreFormatError("line 1: expected header 'dim <d>'") from exc
    entries: dict[str, np.ndarray] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        text, sep, rest = line.partition("\t")
        if not sep:
            raise StoreFormatError(f"line {line_no}: missing tab separator")
        values = rest.split()
        if len(values) != dim:
            raise StoreFormatError(f"line {line_no}: expected {dim} values, got {len(values)}")
        try:
            vec = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError as exc:
            raise StoreFormatError(f"line {line_no}: non-numeric value") from exc
        if not np.all(np.isfinite(vec)):
            raise StoreFormatError(f"line {line_no}: non-finite value")
        entries[_unescape(text)] = vec
    return EmbeddingStore(dim=dim, entries=entries, fallback_policy=fallback_policy)


def save_store(store: EmbeddingStore, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim {store.dim}\n")
        for text, vec in store.entries.items():
            fh.write(_escape(text) + "\t" + " ".join(repr(float(v)) for v in vec) + "\n")


def build_synthetic_store(spec, seed: int, coherence: float = 0.7) -> EmbeddingStore:
    """Embedding store for a synthetic cohort's vocabulary.

    Mimics the geometry of real sentence embeddings: words from one risk
    pool share a class direction (blended with per-word noise at the given
    coherence), shared-pool words are pure noise.  Hash-fallback vectors
    lack this structure, which makes tiny-sample learning through the
    positional layout unrealistically hard.
    """
    from .dataset import CohortSpec

    assert isinstance(spec, CohortSpec)
    rng = np.random.default_rng(seed)

    def unit(v: np.ndarray) -> np.ndarray:
        return v / np.linalg.norm(v)

    base_low = unit(rng.standard_normal(EMBED_DIM))
    base_high = unit(rng.standard_normal(EMBED_DIM))
    entries: dict[str, np.ndarray] = {}
    for text in spec.vocab_low:
        noise = unit(rng.standard_normal(EMBED_DIM))
        entries[text] = unit(coherence * base_low + (1 - coherence) * noise)
    for text in spec.vocab_high:
        noise = unit(rng.standard_normal(EMBED_DIM))
        entries[text] = unit(coherence * base_high + (1 - coherence) * noise)
    for text in spec.vocab_shared + ("admitted to hospital",):
        entries[text] = unit(rng.standard_normal(EMBED_DIM))
    return EmbeddingStore(dim=EMBED_DIM, entries=entries, fallback_policy="hash")


@dataclass(frozen=True)
class ProjectionMatrix:
    """Fixed seeded 32x768 projection; every row has unit Euclidean norm."""

    values: np.ndarray
    seed: int


def build_projection(seed: int, rows: int = EVENT_DIMS, cols: int = EMBED_DIM) -> ProjectionMatrix:
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((rows, cols))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    return ProjectionMatrix(values=m, seed=seed)


@dataclass(frozen=True)
class TimeNormalizer:
    mean: float
    std: float

    def normalize(self, t_hours: float) -> float:
        return (t_hours - self.mean) / self.std

    def invert(self, value: float) -> float:
        return value * self.std + self.mean


def fit_time_normalizer(cases: list[CaseRecord]) -> TimeNormalizer:
    """Z-score fit over all timestamps of all given cases (population std).

    Fit once on the initially labeled cases and keep frozen for the rest of
    a run; refitting mid-run would shift every feature between iterations.
    A degenerate spread (std < 1e-9) floors to 1.0 hour.
    """
    ts = np.array([e.t_hours for c in cases for e in c.events], dtype=np.float64)
    if ts.size == 0:
        raise InsufficientDataError("no events to fit a time normalizer")
    std = float(np.std(ts))
    if std < 1e-9:
        std = 1.0
    return TimeNormalizer(mean=float(np.mean(ts)), std=std)


@dataclass
class FeatureVector:
    values: np.ndarray
    n_real_pairs: int
    case_id: str


@dataclass(frozen=True)
class FeatureSlot:
    """Position of one flat feature index: which pair, and which slot inside it."""

    pair_index: int
    kind: Literal["event", "time"]
    dim: Optional[int] = None


def locate_feature(flat_index: int) -> FeatureSlot:
    if not 0 <= flat_index < TOTAL_DIMS:
        raise IndexError(f"flat index {flat_index} outside [0, {TOTAL_DIMS})")
    pair, offset = divmod(flat_index, BLOCK)
    if offset == EVENT_DIMS:
        return FeatureSlot(pair_index=pair, kind="time")
    return FeatureSlot(pair_index=pair, kind="event", dim=offset)


def flat_index(slot: FeatureSlot) -> int:
    offset = EVENT_DIMS if slot.kind == "time" else slot.dim
    return slot.pair_index * BLOCK + offset


def featurize_case(
    record: CaseRecord,
    store: EmbeddingStore,
    proj: ProjectionMatrix,
    norm: TimeNormalizer,
) -> FeatureVector:
    """Project each event embedding to 32 dims, append the normalized timestamp,
    and pack the first 150 time-sorted pairs into one flat vector.

    Padded blocks are exactly zero, including their time slots.
    """
    events = canonical_events(record)[:PAIR_CAP]
    values = np.zeros(TOTAL_DIMS, dtype=np.float64)
    if events:
        embedded = np.stack([embed_event(e.event, store) for e in events])
        projected = embedded @ proj.values.T
        for p, ev in enumerate(events):
            base = p * BLOCK
            values[base : base + EVENT_DIMS] = projected[p]
            values[base + EVENT_DIMS] = norm.normalize(ev.t_hours)
    return FeatureVector(values=values, n_real_pairs=len(events), case_id=record.id)
