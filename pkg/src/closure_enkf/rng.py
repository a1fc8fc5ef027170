"""Named, keyed random substreams derived from a single master seed.

Every stream is identified by a name. The name is hashed to a 64-bit key and
combined with the master seed through :class:`numpy.random.SeedSequence`, so
adding a new stream never changes the numbers produced by existing ones.

Stream names used by the package:

``truth``
    initial-condition sampling for ground truth (only when not a fixture)
``obs-noise``
    synthetic measurement noise
``ens-init-coef-{k}``
    prior draws of coefficient ``k`` for all members
``member-{i}-forecast-coef-{k}``
    Brownian increments of coefficient ``k`` for member ``i``
``member-{i}-perturbation``
    measurement perturbations for member ``i``
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_key(name: str) -> int:
    """64-bit key of a stream name (BLAKE2b digest, little endian)."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Streams:
    """Factory of independent generators keyed by name.

    Examples
    --------
    >>> s = Streams(42)
    >>> a = s.get("obs-noise").standard_normal(3)
    >>> b = Streams(42).get("obs-noise").standard_normal(3)
    >>> bool((a == b).all())
    True
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64

    def get(self, name: str) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=[self.seed, stream_key(name)])
        return np.random.Generator(np.random.PCG64(ss))

    def many(self, template: str, count: int, **fmt) -> list[np.random.Generator]:
        """Generators for ``template.format(i=0..count-1, **fmt)``."""
        return [self.get(template.format(i=i, **fmt)) for i in range(count)]

    def __repr__(self):
        return f"Streams(seed={self.seed})"
