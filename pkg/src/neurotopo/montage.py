"""32-channel 10-10 electrode montage and its 2D head-disc projection."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass


def project(azimuth: float, elevation: float) -> tuple[float, float]:
    """Azimuthal-equidistant projection of a scalp site onto the unit disc.

    azimuth is measured from the nose direction (+y), positive toward the
    right ear (+x). elevation is measured up from the ear plane; the vertex
    (elevation pi/2) maps to the disc center.
    """
    if not 0.0 <= elevation <= math.pi / 2:
        raise ValueError(f"elevation must be in [0, pi/2], got {elevation}")
    radius = (math.pi / 2 - elevation) / (math.pi / 2)
    return (radius * math.sin(azimuth), radius * math.cos(azimuth))


@dataclass(frozen=True)
class Electrode:
    name: str
    azimuth: float      # radians
    elevation: float    # radians
    pos2d: tuple[float, float]

    @classmethod
    def at(cls, name: str, azimuth_deg: float, elevation_deg: float) -> "Electrode":
        az = math.radians(azimuth_deg)
        el = math.radians(elevation_deg)
        return cls(name, az, el, project(az, el))


@dataclass(frozen=True)
class Montage:
    """Fixed, ordered electrode set; the order is the canonical channel order."""
    electrodes: tuple[Electrode, ...]

    def __post_init__(self):
        names = [e.name for e in self.electrodes]
        if len(set(names)) != len(names):
            raise ValueError("electrode names must be unique")
        for e in self.electrodes:
            if math.hypot(*e.pos2d) > 1.0 + 1e-12:
                raise ValueError(f"{e.name} lies outside the unit disc")

    def __len__(self) -> int:
        return len(self.electrodes)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.electrodes]

    def find(self, name: str) -> Electrode:
        for e in self.electrodes:
            if e.name == name:
                return e
        raise KeyError(name)

    def index(self, name: str) -> int:
        for i, e in enumerate(self.electrodes):
            if e.name == name:
                return i
        raise KeyError(name)

    @staticmethod
    def head_radius_px(width: int, height: int) -> float:
        """Pixel radius of the head circle for a target image size."""
        return 0.48 * min(width, height)

    def to_csv(self) -> str:
        """CSV table (name, azimuth, elevation, x, y), 6-decimal fixed."""
        buf = io.StringIO()
        buf.write("name,azimuth,elevation,x,y\n")
        for e in self.electrodes:
            buf.write(
                f"{e.name},{e.azimuth:.6f},{e.elevation:.6f},"
                f"{e.pos2d[0]:.6f},{e.pos2d[1]:.6f}\n"
            )
        return buf.getvalue()


# Nominal actiCAP-style 32-channel 10-10 set as (azimuth deg, elevation deg).
# Left/right pairs carry exactly mirrored azimuths so the layout is
# bit-exactly symmetric after projection.
_LAYOUT_32: list[tuple[str, float, float]] = [
    ("Fp1", -18.0, 18.0), ("Fp2", 18.0, 18.0),
    ("F7", -54.0, 18.0), ("F3", -39.0, 43.0), ("Fz", 0.0, 54.0),
    ("F4", 39.0, 43.0), ("F8", 54.0, 18.0),
    ("FC5", -69.0, 33.0), ("FC1", -31.0, 62.0),
    ("FC2", 31.0, 62.0), ("FC6", 69.0, 33.0),
    ("T7", -90.0, 18.0), ("C3", -90.0, 54.0), ("Cz", 0.0, 90.0),
    ("C4", 90.0, 54.0), ("T8", 90.0, 18.0),
    ("TP9", -108.0, 0.0), ("CP5", -111.0, 33.0), ("CP1", -149.0, 62.0),
    ("CP2", 149.0, 62.0), ("CP6", 111.0, 33.0), ("TP10", 108.0, 0.0),
    ("P7", -126.0, 18.0), ("P3", -141.0, 43.0), ("Pz", 180.0, 54.0),
    ("P4", 141.0, 43.0), ("P8", 126.0, 18.0),
    ("PO9", -144.0, 0.0), ("O1", -162.0, 18.0), ("Oz", 180.0, 18.0),
    ("O2", 162.0, 18.0), ("PO10", 144.0, 0.0),
]

# Named left/right partners used by symmetry checks and the synthesizer.
MIRROR_PAIRS: list[tuple[str, str]] = [
    ("Fp1", "Fp2"), ("F7", "F8"), ("F3", "F4"), ("FC5", "FC6"),
    ("FC1", "FC2"), ("T7", "T8"), ("C3", "C4"), ("TP9", "TP10"),
    ("CP5", "CP6"), ("CP1", "CP2"), ("P7", "P8"), ("P3", "P4"),
    ("PO9", "PO10"), ("O1", "O2"),
]


def builtin_montage_32() -> Montage:
    """The fixed 32-channel montage used throughout the pipeline."""
    by_name: dict[str, Electrode] = {}
    for name, az, el in _LAYOUT_32:
        e = Electrode.at(name, az, el)
        if name == "Cz":
            # vertex: force the exact disc center, avoiding sin/cos residue
            e = Electrode(name, e.azimuth, e.elevation, (0.0, 0.0))
        else:
            # snap midline sites onto the x=0 / y=0 axes exactly
            x, y = e.pos2d
            if abs(x) < 1e-12:
                x = 0.0
            if abs(y) < 1e-12:
                y = 0.0
            e = Electrode(name, e.azimuth, e.elevation, (x, y))
        by_name[name] = e
    # derive each right partner from its left twin so mirror symmetry is exact
    for left, right in MIRROR_PAIRS:
        lx, ly = by_name[left].pos2d
        r = by_name[right]
        by_name[right] = Electrode(r.name, r.azimuth, r.elevation, (-lx, ly))
    return Montage(tuple(by_name[name] for name, _, _ in _LAYOUT_32))
