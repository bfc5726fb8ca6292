"""Counter-based random streams keyed by (master seed, path index, tag).

Every consumer draws from its own tagged stream, so adding a diagnostic that
consumes randomness never shifts the draws a simulation sees.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


def tag_code(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "little")


@dataclass(frozen=True)
class RngStreamSpec:
    master: int
    path: int
    tag: str

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.master) & (2 ** 64 - 1),
                                    spawn_key=(int(self.path), tag_code(self.tag)))
        return np.random.Generator(np.random.Philox(ss))


def stream(master: int, path: int, tag: str) -> np.random.Generator:
    return RngStreamSpec(master, path, tag).generator()


def streams(master: int, paths, tag: str) -> list[np.random.Generator]:
    return [stream(master, p, tag) for p in paths]
