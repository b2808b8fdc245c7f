"""Small vector helpers shared by retrieval and scoring."""

from __future__ import annotations

import math
from typing import Sequence


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity clamped to [-1, 1].

    Sums use correctly-rounded accumulation (``math.fsum``), so the
    result is deterministic and independent of summation order; any
    re-statement of num / sqrt(|a|^2 * |b|^2) over the same floats lands
    on the same value bit for bit. Identical nonzero vectors score
    exactly 1.0.
    """
    va = tuple(float(x) for x in a)
    vb = tuple(float(x) for x in b)
    if len(va) != len(vb):
        raise ValueError(f"dimension mismatch: {len(va)} vs {len(vb)}")
    if va == vb:
        return 1.0 if any(va) else 0.0
    num = math.fsum(x * y for x, y in zip(va, vb))
    den = math.sqrt(
        math.fsum(x * x for x in va) * math.fsum(y * y for y in vb)
    )
    if den == 0.0:
        return 0.0
    return max(-1.0, min(1.0, num / den))
