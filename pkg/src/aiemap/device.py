"""Target array description and integer datatypes.

Everything architectural that other modules need (grid size, clock,
per-precision MAC rate, load bandwidth, memory capacities) lives on
:class:`DeviceDesc`.  Alternate devices are described by a JSON file with the
same field names; see :func:`load_device`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from .errors import ValidationError


class IntDType(Enum):
    """Signed two's-complement integer types handled by the compiler."""

    i8 = 8
    i16 = 16
    i32 = 32
    i64 = 64

    @property
    def bits(self) -> int:
        return self.value

    @property
    def nbytes(self) -> int:
        return self.value // 8

    @property
    def signed(self) -> bool:
        return True

    @property
    def numpy(self) -> str:
        return f"<i{self.nbytes}"

    @classmethod
    def parse(cls, name: "str | IntDType") -> "IntDType":
        if isinstance(name, IntDType):
            return name
        try:
            return cls[str(name)]
        except KeyError:
            raise ValidationError(f"unknown integer dtype {name!r}") from None


def dtype_range(d: IntDType) -> tuple[int, int]:
    return -(1 << (d.bits - 1)), (1 << (d.bits - 1)) - 1


DTypePair = tuple[IntDType, IntDType]

# accumulator / output widths used when a layer does not spell them out
DEFAULT_ACC = {
    (IntDType.i8, IntDType.i8): IntDType.i32,
    (IntDType.i16, IntDType.i8): IntDType.i32,
    (IntDType.i16, IntDType.i16): IntDType.i64,
}
DEFAULT_OUT = {
    (IntDType.i8, IntDType.i8): IntDType.i8,
    (IntDType.i16, IntDType.i8): IntDType.i8,
    (IntDType.i16, IntDType.i16): IntDType.i16,
}


@dataclass(frozen=True)
class DeviceDesc:
    """Immutable description of a 2D compute-tile array.

    ``macs_per_cycle`` maps an (activation, weight) dtype pair to the number
    of parallel MACs one tile issues per cycle.  Memory tiles are modelled as
    a pool along the bottom edge, one per column, and are not counted in
    ``cols * rows``.
    """

    cols: int
    rows: int
    clock_ghz: float
    load_bytes_per_cycle: int
    macs_per_cycle: Mapping[DTypePair, int]
    memtile_capacity_bytes: int = 512 * 1024
    local_mem_bytes: int = 64 * 1024
    store_bytes_per_cycle: int = 32
    stream_bytes_per_cycle: int = 4
    name: str = "custom"
    memtile_count: int | None = None
    native_tilings: Mapping[DTypePair, tuple[int, int, int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.cols < 1 or self.rows < 1:
            raise ValidationError(f"device grid must be at least 1x1, got {self.cols}x{self.rows}")
        if self.clock_ghz <= 0:
            raise ValidationError("clock_ghz must be positive")
        for key in ("load_bytes_per_cycle", "memtile_capacity_bytes", "local_mem_bytes",
                    "store_bytes_per_cycle", "stream_bytes_per_cycle"):
            if getattr(self, key) <= 0:
                raise ValidationError(f"{key} must be positive")
        if not self.macs_per_cycle:
            raise ValidationError("macs_per_cycle must list at least one dtype pair")
        for pair, w in self.macs_per_cycle.items():
            if w <= 0:
                raise ValidationError(f"macs_per_cycle[{pair[0].name},{pair[1].name}] must be positive")
        if self.memtile_count is None:
            object.__setattr__(self, "memtile_count", self.cols)

    @property
    def tiles(self) -> int:
        return self.cols * self.rows

    @property
    def load_port_bytes(self) -> int:
        # two independent load ports share the total load bandwidth
        return self.load_bytes_per_cycle // 2

    def supports(self, act: IntDType, wgt: IntDType) -> bool:
        return (act, wgt) in self.macs_per_cycle

    def macs(self, act: IntDType, wgt: IntDType) -> int:
        try:
            return self.macs_per_cycle[(act, wgt)]
        except KeyError:
            raise ValidationError(f"dtype pair {act.name}x{wgt.name} not supported by device {self.name}") from None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "cols": self.cols,
            "rows": self.rows,
            "clock_ghz": self.clock_ghz,
            "load_bytes_per_cycle": self.load_bytes_per_cycle,
            "store_bytes_per_cycle": self.store_bytes_per_cycle,
            "stream_bytes_per_cycle": self.stream_bytes_per_cycle,
            "memtile_capacity_bytes": self.memtile_capacity_bytes,
            "memtile_count": self.memtile_count,
            "local_mem_bytes": self.local_mem_bytes,
            "macs_per_cycle": {f"{a.name}x{b.name}": w for (a, b), w in sorted(
                self.macs_per_cycle.items(), key=lambda kv: (kv[0][0].bits, kv[0][1].bits))},
            "native_tilings": {f"{a.name}x{b.name}": list(t) for (a, b), t in sorted(
                self.native_tilings.items(), key=lambda kv: (kv[0][0].bits, kv[0][1].bits))},
        }


def _parse_pair(key: str) -> DTypePair:
    try:
        a, b = key.split("x")
    except ValueError:
        raise ValidationError(f"dtype pair key must look like 'i8xi8', got {key!r}") from None
    return IntDType.parse(a), IntDType.parse(b)


AIEML_NATIVE_TILINGS = {
    (IntDType.i8, IntDType.i8): (4, 8, 8),
    (IntDType.i16, IntDType.i8): (4, 4, 8),
    (IntDType.i16, IntDType.i16): (4, 4, 4),
}


def default_aieml_device() -> DeviceDesc:
    """38 x 8 AIE-ML array at 1.25 GHz."""
    return DeviceDesc(
        name="aie-ml",
        cols=38,
        rows=8,
        clock_ghz=1.25,
        load_bytes_per_cycle=64,
        macs_per_cycle={
            (IntDType.i8, IntDType.i8): 256,
            (IntDType.i16, IntDType.i8): 128,
            (IntDType.i16, IntDType.i16): 64,
        },
        native_tilings=dict(AIEML_NATIVE_TILINGS),
    )


def device_from_dict(d: Mapping) -> DeviceDesc:
    base = default_aieml_device().to_dict()
    unknown = set(d) - set(base)
    if unknown:
        raise ValidationError(f"unknown device field(s): {', '.join(sorted(unknown))}")
    merged = {**base, **d}
    macs = {_parse_pair(k): int(v) for k, v in merged["macs_per_cycle"].items()}
    native = {_parse_pair(k): tuple(int(x) for x in v) for k, v in merged["native_tilings"].items()}
    # a custom device that drops a dtype pair must not inherit its tiling
    native = {p: t for p, t in native.items() if p in macs}
    return DeviceDesc(
        name=str(merged["name"]),
        cols=int(merged["cols"]),
        rows=int(merged["rows"]),
        clock_ghz=float(merged["clock_ghz"]),
        load_bytes_per_cycle=int(merged["load_bytes_per_cycle"]),
        store_bytes_per_cycle=int(merged["store_bytes_per_cycle"]),
        stream_bytes_per_cycle=int(merged["stream_bytes_per_cycle"]),
        memtile_capacity_bytes=int(merged["memtile_capacity_bytes"]),
        memtile_count=None if merged["memtile_count"] is None else int(merged["memtile_count"]),
        local_mem_bytes=int(merged["local_mem_bytes"]),
        macs_per_cycle=macs,
        native_tilings=native,
    )


def load_device(data: bytes | str | None) -> DeviceDesc:
    """Parse a JSON device file.  ``None`` selects the default AIE-ML device.

    Fields not present in the file keep their default AIE-ML values.
    """
    if data is None:
        return default_aieml_device()
    try:
        d = json.loads(data)
    except json.JSONDecodeError as e:
        raise ValidationError(f"device file line {e.lineno}: {e.msg}") from None
    if not isinstance(d, dict):
        raise ValidationError("device file must contain a JSON object")
    return device_from_dict(d)


def dump_device(dev: DeviceDesc) -> str:
    return json.dumps(dev.to_dict(), indent=2, sort_keys=True) + "\n"
