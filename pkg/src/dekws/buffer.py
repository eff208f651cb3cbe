"""Fixed-capacity dark-experience memory filled by reservoir sampling.

Every training example ever offered has an equal chance of residing in the
buffer, regardless of stream length or task boundaries. Each entry carries
the example's features, its ground-truth label, and the pre-softmax logits
the network produced when the example was offered; the logits are frozen at
insertion time. Rehearsal and distillation draw independent batches.
"""

import random
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBufferError, InvalidInputError, InvalidShapeError


@dataclass(frozen=True)
class BufferEntry:
    """One unit of dark experience: (features, label, stored logits)."""

    features: np.ndarray
    label: int
    logits: np.ndarray


class ReservoirBuffer:
    """Uniform reservoir over the whole training stream.

    The buffer owns one seeded random stream for replacement decisions;
    batch sampling uses a caller-provided stream so the two can be
    reproduced independently. Entries are copied in and copied out, so no
    caller can mutate the store.
    """

    def __init__(self, capacity: int, num_classes: int, seed: int = 0):
        if capacity < 0:
            raise InvalidInputError(f"capacity must be >= 0, got {capacity}")
        if num_classes < 1:
            raise InvalidInputError(f"num_classes must be >= 1, got {num_classes}")
        self.capacity = capacity
        self.num_classes = num_classes
        self.entries: list[BufferEntry] = []
        self.num_seen = 0
        self.rng = random.Random(seed)

    def __len__(self) -> int:
        return len(self.entries)

    def insert(self, entry: BufferEntry) -> None:
        """Offer one example; it displaces a uniform victim once full.

        With capacity 0 the offer is a no-op that still counts toward
        num_seen.
        """
        if len(entry.logits) != self.num_classes:
            raise InvalidShapeError(
                f"entry logits have length {len(entry.logits)}, "
                f"buffer expects {self.num_classes}"
            )
        if self.capacity == 0:
            self.num_seen += 1
            return
        if self.num_seen < self.capacity:
            self.entries.append(_copy_entry(entry))
        else:
            j = self.rng.randint(0, self.num_seen)
            if j < self.capacity:
                self.entries[j] = _copy_entry(entry)
        self.num_seen += 1

    def sample_batch(self, k: int, rng: random.Random) -> list[BufferEntry]:
        """min(k, len) distinct entries, uniform without replacement."""
        if not self.entries:
            raise EmptyBufferError("cannot sample from an empty buffer")
        if k < 1:
            raise InvalidInputError(f"batch size must be >= 1, got {k}")
        chosen = rng.sample(self.entries, min(k, len(self.entries)))
        return [_copy_entry(e) for e in chosen]

    def occupancy(self) -> tuple[int, int]:
        """(current fill, total examples ever offered)."""
        return len(self.entries), self.num_seen

    def state(self) -> dict:
        """Snapshot for checkpointing; restores bit-exactly via from_state."""
        return {
            "capacity": self.capacity,
            "num_classes": self.num_classes,
            "num_seen": self.num_seen,
            "rng_state": self.rng.getstate(),
            "entries": [
                (e.features.copy(), e.label, e.logits.copy()) for e in self.entries
            ],
        }

    @classmethod
    def from_state(cls, state: dict) -> "ReservoirBuffer":
        buf = cls(state["capacity"], state["num_classes"])
        buf.num_seen = state["num_seen"]
        buf.rng.setstate(_rng_state_tuple(state["rng_state"]))
        buf.entries = [
            BufferEntry(np.asarray(f), int(label), np.asarray(z))
            for f, label, z in state["entries"]
        ]
        return buf


def _copy_entry(entry: BufferEntry) -> BufferEntry:
    return BufferEntry(
        features=np.array(entry.features),
        label=int(entry.label),
        logits=np.array(entry.logits),
    )


def _rng_state_tuple(state):
    """Normalize a possibly JSON-roundtripped random.Random state."""
    version, internal, gauss = state
    return (version, tuple(internal), gauss)


def reservoir_insert(buf: ReservoirBuffer, entry: BufferEntry) -> ReservoirBuffer:
    buf.insert(entry)
    return buf


def sample_batch(buf: ReservoirBuffer, k: int, rng: random.Random) -> list[BufferEntry]:
    return buf.sample_batch(k, rng)


def occupancy(buf: ReservoirBuffer) -> tuple[int, int]:
    return buf.occupancy()
