"""Convolution shapes and the schedule search space.

A schedule is one concrete implementation choice for a conv2d kernel:
tiling factors for the output dims, the nesting order of the four loop
dims (oc, oh, ow, ic), lanes over the innermost dim (vector width times
unroll), and the input/weight data layout.
"""

import itertools
import random
from dataclasses import dataclass

from ..errors import InvalidSchedule, NoValidSchedule

LOOP_DIMS = ("oc", "oh", "ow", "ic")
LOOP_ORDERS = tuple("-".join(p) for p in itertools.permutations(LOOP_DIMS))
VECTOR_WIDTHS = (1, 2, 4, 8, 16)
UNROLLS = (1, 2, 4, 8)
LAYOUTS = ("channel_major", "channel_blocked")

DEFAULT_ORDER = "oc-oh-ow-ic"


@dataclass(frozen=True)
class ConvShape:
    in_channels: int
    out_channels: int
    height: int
    width: int
    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "height", "width", "kernel", "stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.padding < 0:
            raise ValueError("padding must be >= 0")
        if self.out_height < 1 or self.out_width < 1:
            raise ValueError("shape yields empty output")

    @property
    def out_height(self) -> int:
        return (self.height + 2 * self.padding - self.kernel) // self.stride + 1

    @property
    def out_width(self) -> int:
        return (self.width + 2 * self.padding - self.kernel) // self.stride + 1

    @property
    def flops(self) -> int:
        """Analytic FLOPs: 2 * oc * oh * ow * ic * kh * kw."""
        return (
            2
            * self.out_channels
            * self.out_height
            * self.out_width
            * self.in_channels
            * self.kernel
            * self.kernel
        )

    def key(self) -> tuple:
        return (
            self.in_channels, self.out_channels, self.height, self.width,
            self.kernel, self.stride, self.padding,
        )


@dataclass(frozen=True)
class ConvSchedule:
    tile_oc: int = 1
    tile_oh: int = 1
    tile_ow: int = 1
    loop_order: str = DEFAULT_ORDER
    vector_width: int = 1
    unroll: int = 1
    layout: str = "channel_major"

    def perm(self) -> tuple[int, int, int, int]:
        names = self.loop_order.split("-")
        return tuple(LOOP_DIMS.index(n) for n in names)

    def to_dict(self) -> dict:
        return {
            "tile_oc": self.tile_oc,
            "tile_oh": self.tile_oh,
            "tile_ow": self.tile_ow,
            "loop_order": self.loop_order,
            "vector_width": self.vector_width,
            "unroll": self.unroll,
            "layout": self.layout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConvSchedule":
        return cls(**d)


DEFAULT_SCHEDULE = ConvSchedule()


def validate_schedule(shape: ConvShape, sched: ConvSchedule) -> None:
    """Raise InvalidSchedule unless sched is valid for shape.

    Tiles must not exceed output extents; lanes (vector_width * unroll)
    must fit the innermost dim's extent; layout and order names must be
    known.
    """
    if sched.loop_order not in LOOP_ORDERS:
        raise InvalidSchedule(f"unknown loop order {sched.loop_order!r}")
    if sched.layout not in LAYOUTS:
        raise InvalidSchedule(f"unknown layout {sched.layout!r}")
    if sched.vector_width not in VECTOR_WIDTHS:
        raise InvalidSchedule(f"vector width {sched.vector_width} unsupported")
    if sched.unroll not in UNROLLS:
        raise InvalidSchedule(f"unroll {sched.unroll} unsupported")
    if min(sched.tile_oc, sched.tile_oh, sched.tile_ow) < 1:
        raise InvalidSchedule("tiling factors must be >= 1")
    extents = {
        "oc": shape.out_channels,
        "oh": shape.out_height,
        "ow": shape.out_width,
        "ic": shape.in_channels,
    }
    if sched.tile_oc > extents["oc"]:
        raise InvalidSchedule(f"tile_oc {sched.tile_oc} exceeds extent {extents['oc']}")
    if sched.tile_oh > extents["oh"]:
        raise InvalidSchedule(f"tile_oh {sched.tile_oh} exceeds extent {extents['oh']}")
    if sched.tile_ow > extents["ow"]:
        raise InvalidSchedule(f"tile_ow {sched.tile_ow} exceeds extent {extents['ow']}")
    inner = sched.loop_order.split("-")[-1]
    lanes = sched.vector_width * sched.unroll
    if lanes > extents[inner]:
        raise InvalidSchedule(
            f"lanes {lanes} exceed innermost ({inner}) extent {extents[inner]}"
        )


def is_valid(shape: ConvShape, sched: ConvSchedule) -> bool:
    try:
        validate_schedule(shape, sched)
        return True
    except InvalidSchedule:
        return False


def _tile_candidates(extent: int) -> list[int]:
    cands = [t for t in (1, 2, 4, 8, 16, 32) if t <= extent]
    if extent not in cands:
        cands.append(extent)
    return cands


def sample_schedules(shape: ConvShape, count: int, rng: random.Random) -> list[ConvSchedule]:
    """Seeded sample of distinct valid schedules (the default excluded)."""
    seen = {DEFAULT_SCHEDULE}
    out: list[ConvSchedule] = []
    oc_c = _tile_candidates(shape.out_channels)
    oh_c = _tile_candidates(shape.out_height)
    ow_c = _tile_candidates(shape.out_width)
    attempts = 0
    max_attempts = count * 200 + 1000
    while len(out) < count and attempts < max_attempts:
        attempts += 1
        sched = ConvSchedule(
            tile_oc=rng.choice(oc_c),
            tile_oh=rng.choice(oh_c),
            tile_ow=rng.choice(ow_c),
            loop_order=rng.choice(LOOP_ORDERS),
            vector_width=rng.choice(VECTOR_WIDTHS),
            unroll=rng.choice(UNROLLS),
            layout=rng.choice(LAYOUTS),
        )
        if sched in seen or not is_valid(shape, sched):
            continue
        seen.add(sched)
        out.append(sched)
    if not out and count > 0 and not is_valid(shape, DEFAULT_SCHEDULE):
        raise NoValidSchedule(f"no valid schedule for shape {shape}")
    return out


def mutate_schedule(shape: ConvShape, sched: ConvSchedule, rng: random.Random) -> ConvSchedule:
    """Single-field mutation used by hill climbing; always returns a valid
    schedule (falls back to the input when a mutation dead-ends)."""
    fields = ("tile_oc", "tile_oh", "tile_ow", "loop_order", "vector_width", "unroll", "layout")
    for _ in range(32):
        f = rng.choice(fields)
        d = sched.to_dict()
        if f == "tile_oc":
            d[f] = rng.choice(_tile_candidates(shape.out_channels))
        elif f == "tile_oh":
            d[f] = rng.choice(_tile_candidates(shape.out_height))
        elif f == "tile_ow":
            d[f] = rng.choice(_tile_candidates(shape.out_width))
        elif f == "loop_order":
            d[f] = rng.choice(LOOP_ORDERS)
        elif f == "vector_width":
            d[f] = rng.choice(VECTOR_WIDTHS)
        elif f == "unroll":
            d[f] = rng.choice(UNROLLS)
        else:
            d[f] = rng.choice(LAYOUTS)
        cand = ConvSchedule.from_dict(d)
        if cand != sched and is_valid(shape, cand):
            return cand
    return sched
