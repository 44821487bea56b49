"""Persistence diagram types.

A diagram is a multiset of (birth, death) points. Each point carries its
homological dimension, a pairing kind, and (when it came from a filtration)
the indices of the critical cells / nodes that created and destroyed it.

Kinds
-----
ordinary   born and die going upward; death >= birth.
relative   born and die going downward; recorded with birth >= death.
extended   born upward, die downward. dim-0 pairs have birth <= death
           (component min to component max); dim-1 pairs have birth >= death.
essential  never dies; death is +inf. Only sublevel filtrations emit these.
"""

import math
from dataclasses import dataclass, field

ORDINARY = "ordinary"
RELATIVE = "relative"
EXTENDED = "extended"
ESSENTIAL = "essential"

KINDS = (ORDINARY, RELATIVE, EXTENDED, ESSENTIAL)


@dataclass(frozen=True)
class PersistencePoint:
    birth: float
    death: float
    dim: int = 0
    kind: str = ORDINARY
    birth_cell: int | None = None
    death_cell: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.dim not in (0, 1):
            raise ValueError(f"dim must be 0 or 1, got {self.dim}")
        if not math.isfinite(self.birth):
            raise ValueError("birth must be finite")
        if self.kind == ESSENTIAL:
            if not math.isinf(self.death):
                raise ValueError("essential points must have death = +inf")
        elif not math.isfinite(self.death):
            raise ValueError("death may be infinite only for essential points")
        if self.kind == ORDINARY and self.death < self.birth:
            raise ValueError("ordinary points need death >= birth")
        if self.kind == EXTENDED and self.dim == 1 and self.birth < self.death:
            raise ValueError("extended dim-1 points need birth >= death")

    @property
    def persistence(self):
        """Lifetime |death - birth| (inf for essential points)."""
        return abs(self.death - self.birth)

    def sort_key(self):
        return (
            self.birth,
            self.death,
            self.dim,
            self.kind,
            -1 if self.birth_cell is None else self.birth_cell,
            -1 if self.death_cell is None else self.death_cell,
        )


@dataclass
class PersistenceDiagram:
    points: list[PersistencePoint] = field(default_factory=list)
    source_id: str = ""

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def finite_points(self):
        return [p for p in self.points if math.isfinite(p.death)]

    def same_multiset(self, other):
        """Multiset equality on points (source_id ignored)."""
        return sorted(p.sort_key() for p in self.points) == sorted(
            p.sort_key() for p in other.points
        )

    def drop_zero_persistence(self):
        """Copy without zero-lifetime points (essential points are kept)."""
        kept = [p for p in self.points if p.kind == ESSENTIAL or p.birth != p.death]
        return PersistenceDiagram(kept, self.source_id)
