"""Expansion of the two secret seeds into a concrete transformation plan.

Everything here is bit-exact: the generator is SplitMix64 over Python ints
masked to 64 bits, and the order of draws is fixed::

    stream = SplitMix64(k_st)
    for m in MBs (once in V1):
        for s in SBs:
            rotation = next % 4, flip = next % 3, invert = next % 2, perm = next % 6
        sb_perm[m] = fisher_yates(stream, sbs_per_mb)
    mb_perm = fisher_yates(SplitMix64(k_ms), n_mbs)

Permutations map a source index to its destination: ``mb_perm[m]`` is the grid
position plaintext MB ``m`` is moved to, ``sb_perm[s]`` the slot SB ``s`` is
moved to inside its MB.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from itertools import permutations
from pathlib import Path
import json
import secrets

from .geometry import BlockGrid, FormatError

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

# lexicographic order of the (R, G, B) images; index drawn as next % 6
CHANNEL_PERMS: tuple[tuple[int, int, int], ...] = tuple(permutations((0, 1, 2)))


class Mode(str, Enum):
    V1 = "V1"  # one SB parameter set shared by all MBs
    V2 = "V2"  # independent SB parameter set per MB


class Flip(int, Enum):
    NONE = 0
    HORIZONTAL = 1  # mirror left/right
    VERTICAL = 2  # mirror top/bottom


class SplitMix64:
    """SplitMix64 generator; ``state`` is the running 64-bit accumulator."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        # plain modulo reduction; the bias is irrelevant at these sizes
        return self.next_u64() % n


def fisher_yates(rng: SplitMix64, n: int) -> tuple[int, ...]:
    a = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        a[i], a[j] = a[j], a[i]
    return tuple(a)


def invert_perm(p) -> tuple[int, ...]:
    inv = [0] * len(p)
    for src, dst in enumerate(p):
        inv[dst] = src
    return tuple(inv)


@dataclass(frozen=True)
class KeyMaterial:
    mode: Mode
    k_st: int
    k_ms: int

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        for name in ("k_st", "k_ms"):
            v = getattr(self, name)
            if not 0 <= v <= MASK64:
                raise ValueError(f"{name}={v} is not a 64-bit unsigned seed")

    @classmethod
    def generate(cls, mode: Mode | str = Mode.V1, seed: int | None = None) -> "KeyMaterial":
        """Fresh one-time keys from OS entropy, or reproducible ones from ``seed``."""
        if seed is None:
            return cls(Mode(mode), secrets.randbits(64), secrets.randbits(64))
        rng = SplitMix64(seed)
        return cls(Mode(mode), rng.next_u64(), rng.next_u64())


@dataclass(frozen=True)
class SbParams:
    rotation: int = 0  # degrees counter-clockwise, one of 0/90/180/270
    flip: Flip = Flip.NONE
    invert: bool = False
    channel_perm: tuple[int, int, int] = (0, 1, 2)

    def __post_init__(self):
        if self.rotation not in (0, 90, 180, 270):
            raise ValueError(f"rotation {self.rotation} not a quarter turn")
        object.__setattr__(self, "flip", Flip(self.flip))
        object.__setattr__(self, "invert", bool(self.invert))
        perm = tuple(int(c) for c in self.channel_perm)
        if sorted(perm) != [0, 1, 2]:
            raise ValueError(f"channel_perm {perm} is not a permutation of (0, 1, 2)")
        object.__setattr__(self, "channel_perm", perm)

    @property
    def is_identity(self) -> bool:
        return (self.rotation == 0 and self.flip is Flip.NONE and not self.invert
                and self.channel_perm == (0, 1, 2))


@dataclass(frozen=True)
class TransformPlan:
    """Fully expanded per-MB/per-SB parameters for one clip.

    ``sb_params`` and ``sb_perms`` hold a single entry in V1 and ``n_mbs``
    entries (indexed by plaintext MB) in V2.
    """

    grid: BlockGrid
    mode: Mode
    sb_params: tuple[tuple[SbParams, ...], ...]
    sb_perms: tuple[tuple[int, ...], ...]
    mb_perm: tuple[int, ...]

    def __post_init__(self):
        g = self.grid
        expected = 1 if self.mode is Mode.V1 else g.n_mbs
        if len(self.sb_params) != expected or len(self.sb_perms) != expected:
            raise ValueError(f"{self.mode.value} plan needs {expected} SB parameter sets")
        for params, perm in zip(self.sb_params, self.sb_perms):
            if len(params) != g.sbs_per_mb:
                raise ValueError("one SbParams per SB required")
            if sorted(perm) != list(range(g.sbs_per_mb)):
                raise ValueError(f"sb_perm {perm} is not a bijection")
        if sorted(self.mb_perm) != list(range(g.n_mbs)):
            raise ValueError(f"mb_perm is not a bijection on {g.n_mbs} MBs")
        if any(p.rotation in (90, 270) for ps in self.sb_params for p in ps) and g.sb_h != g.sb_w:
            raise ValueError("quarter-turn rotations need square sub-blocks")

    def params_for(self, m: int) -> tuple[SbParams, ...]:
        return self.sb_params[0 if self.mode is Mode.V1 else m]

    def sb_perm_for(self, m: int) -> tuple[int, ...]:
        return self.sb_perms[0 if self.mode is Mode.V1 else m]

    @property
    def mb_perm_inverse(self) -> tuple[int, ...]:
        return invert_perm(self.mb_perm)

    @classmethod
    def identity(cls, grid: BlockGrid, mode: Mode = Mode.V1) -> "TransformPlan":
        n = 1 if Mode(mode) is Mode.V1 else grid.n_mbs
        ident = tuple(range(grid.sbs_per_mb))
        return cls(grid, Mode(mode), ((SbParams(),) * grid.sbs_per_mb,) * n,
                   (ident,) * n, tuple(range(grid.n_mbs)))

    def as_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "sb_params": [[[p.rotation, int(p.flip), int(p.invert), list(p.channel_perm)]
                           for p in ps] for ps in self.sb_params],
            "sb_perms": [list(p) for p in self.sb_perms],
            "mb_perm": list(self.mb_perm),
        }


def _draw_sb_params(rng: SplitMix64) -> SbParams:
    rotation = 90 * rng.below(4)
    flip = rng.below(3)
    invert = rng.below(2)
    perm = CHANNEL_PERMS[rng.below(6)]
    return SbParams(rotation, Flip(flip), bool(invert), perm)


def expand(keys: KeyMaterial, grid: BlockGrid) -> TransformPlan:
    """Turn ``keys`` into the plan for frames laid out on ``grid``."""
    st = SplitMix64(keys.k_st)
    n_sets = 1 if keys.mode is Mode.V1 else grid.n_mbs
    params, perms = [], []
    for _ in range(n_sets):
        params.append(tuple(_draw_sb_params(st) for _ in range(grid.sbs_per_mb)))
        perms.append(fisher_yates(st, grid.sbs_per_mb))
    mb_perm = fisher_yates(SplitMix64(keys.k_ms), grid.n_mbs)
    return TransformPlan(grid, keys.mode, tuple(params), tuple(perms), mb_perm)


# -- key files ----------------------------------------------------------------

def save_key(keys: KeyMaterial, path, mb: int = 16, sb: int = 8) -> None:
    doc = {"mode": keys.mode.value, "k_st": str(keys.k_st), "k_ms": str(keys.k_ms),
           "mb": mb, "sb": sb}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_key(path) -> tuple[KeyMaterial, int, int]:
    """Read a key file; returns the keys plus the MB and SB sizes it records."""
    try:
        doc = json.loads(Path(path).read_text())
        keys = KeyMaterial(Mode(doc["mode"]), int(doc["k_st"]), int(doc["k_ms"]))
        return keys, int(doc.get("mb", 16)), int(doc.get("sb", 8))
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{path}: malformed key file ({exc})") from exc


def plan_for(keys: KeyMaterial, height: int, width: int, mb: int = 16, sb: int = 8) -> TransformPlan:
    return expand(keys, BlockGrid.for_frame(height, width, mb, sb))

