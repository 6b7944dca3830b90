"""K-minimum-values synopses over record states, for cheap delta-size estimates."""
from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass
from typing import Iterable

from .errors import SketchMismatch
from .model import Dataset

DEFAULT_K = 256
SKETCH_MAGIC = b"DSVCKMV1"
_HDR = struct.Struct(">IQI")
HASH_SPACE = float(1 << 64)


@dataclass(frozen=True)
class Sketch:
    k: int
    count: int
    hashes: tuple[int, ...]  # sorted ascending, distinct, len <= k

    @property
    def exact(self) -> bool:
        """True when the synopsis holds every hash of the set."""
        return len(self.hashes) == self.count

    def to_bytes(self) -> bytes:
        return SKETCH_MAGIC + _HDR.pack(self.k, self.count, len(self.hashes)) + b"".join(
            h.to_bytes(8, "big") for h in self.hashes
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Sketch":
        if data[:8] != SKETCH_MAGIC:
            raise ValueError("not a sketch")
        k, count, n = _HDR.unpack_from(data, 8)
        off = 8 + _HDR.size
        hs = tuple(int.from_bytes(data[off + 8 * i : off + 8 * i + 8], "big") for i in range(n))
        return cls(k, count, hs)


def hash64(state_id: bytes) -> int:
    # state ids are SHA-256 digests, already uniform
    return int.from_bytes(state_id[:8], "big")


def sketch_from_hashes(hashes: Iterable[int], k: int = DEFAULT_K) -> Sketch:
    distinct = set(hashes)
    return Sketch(k, len(distinct), tuple(heapq.nsmallest(k, distinct)))


def build_sketch(ds: Dataset, k: int = DEFAULT_K) -> Sketch:
    return sketch_from_hashes((hash64(r.state_id()) for _, r in ds.iter_records()), k)


def estimate_diff(a: Sketch, b: Sketch) -> float:
    """Estimated size of the symmetric difference of the two state sets.

    Below ``tau = min(max(a), max(b))`` both synopses are complete, so the
    union and the symmetric difference restricted to that hash range are
    known exactly.  Their ratio estimates the fraction of the union that is
    not shared, which is scaled by the exact set sizes.
    """
    if a.k != b.k:
        raise SketchMismatch(f"sketch sizes differ: {a.k} vs {b.k}")
    sa, sb = set(a.hashes), set(b.hashes)
    if a.exact and b.exact:
        return float(len(sa ^ sb))
    if not a.hashes or not b.hashes:
        return float(a.count + b.count)
    tau = min(a.hashes[-1] if not a.exact else 1 << 64, b.hashes[-1] if not b.exact else 1 << 64)
    ua = {h for h in sa if h <= tau}
    ub = {h for h in sb if h <= tau}
    union = len(ua | ub)
    if union == 0:
        return float(abs(a.count - b.count))
    frac = len(ua ^ ub) / union
    # |A^B| = f |A u B| and |A u B| = (|A| + |B| + |A^B|) / 2
    est = frac * (a.count + b.count) / (2.0 - frac)
    return max(est, float(abs(a.count - b.count)))


def estimate_jaccard(a: Sketch, b: Sketch) -> float:
    total = a.count + b.count
    if total == 0:
        return 1.0
    d = estimate_diff(a, b)
    # |A u B| = (|A| + |B| + d) / 2, |A n B| = (|A| + |B| - d) / 2
    return max(0.0, (total - d) / (total + d))
