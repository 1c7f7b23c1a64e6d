"""Well -> facility -> field hierarchy and its three-column table format."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import TopologyError

HEADER = ("well_id", "facility_id", "field_id")


@dataclass(frozen=True)
class Topology:
    wells: dict[str, tuple[str, str]] = field(default_factory=dict)

    def __post_init__(self):
        parent: dict[str, str] = {}
        for well, (facility, fld) in self.wells.items():
            if not well or not facility or not fld:
                raise TopologyError(f"incomplete topology entry for well {well!r}")
            if parent.setdefault(facility, fld) != fld:
                raise TopologyError(
                    f"facility {facility!r} has two field parents: {parent[facility]!r} and {fld!r}"
                )

    @classmethod
    def from_rows(cls, rows) -> "Topology":
        wells: dict[str, tuple[str, str]] = {}
        for well, facility, fld in rows:
            if well in wells and wells[well] != (facility, fld):
                raise TopologyError(f"well {well!r} listed under two facilities")
            wells[well] = (facility, fld)
        return cls(wells)

    def facility_of(self, well: str) -> str:
        try:
            return self.wells[well][0]
        except KeyError:
            raise TopologyError(f"well {well!r} is not in the topology") from None

    def field_of_facility(self, facility: str) -> str:
        for fac, fld in self.wells.values():
            if fac == facility:
                return fld
        raise TopologyError(f"facility {facility!r} is not in the topology")

    @property
    def facilities(self) -> dict[str, str]:
        return {fac: fld for fac, fld in self.wells.values()}

    @property
    def fields(self) -> list[str]:
        return sorted({fld for _, fld in self.wells.values()})

    def wells_of(self, facility: str) -> list[str]:
        return sorted(w for w, (fac, _) in self.wells.items() if fac == facility)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(HEADER)
        for well in sorted(self.wells):
            writer.writerow((well, *self.wells[well]))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Topology":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
        if not rows:
            raise TopologyError("empty topology table")
        header = [c.strip() for c in rows[0]]
        if tuple(header[:3]) != HEADER:
            raise TopologyError(f"topology header must be {','.join(HEADER)}, got {','.join(header)}")
        return cls.from_rows((r[0].strip(), r[1].strip(), r[2].strip()) for r in rows[1:])

    @classmethod
    def read(cls, path: str | Path) -> "Topology":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))
