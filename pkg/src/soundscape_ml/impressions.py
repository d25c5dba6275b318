"""Soundscape impression axes computed from the eight SSQP attribute ratings.

The eight soundscape attributes (Pleasant, Eventful, Calm, Vibrant, Annoying,
Uneventful, Chaotic, Monotonous) are projected onto two orthogonal impression
axes, Pleasantness and Eventfulness.  The skewed attribute pairs contribute
through a cos(45 deg) orthogonal projection, and the result is normalized so
both axes live in [-1, 1]:

    P = [(Pl - An) + cos(pi/4) * ((Ca - Ch) + (Vi - Mo))] / N
    E = [(Ev - Un) + cos(pi/4) * ((Ch - Ca) + (Vi - Mo))] / N

where N is the largest value the numerator can attain on the rating scale:
N = 6 + sqrt(72) for a 7-point scale and N = 4 + sqrt(32) for a 5-point scale
(maximum single-pair difference d = 6 or 4, N = d + d * sqrt(2)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

COS_45 = math.cos(math.pi / 4.0)

# Attribute display labels: English term plus the two Japanese phrasings used
# on the rating form.  Display metadata only; never consumed by the math.
ATTRIBUTE_LABELS = {
    "pl": ("Pleasant", "楽しい，心地よい"),
    "ev": ("Eventful", "出来事が多い，賑やかな"),
    "ca": ("Calm", "落ち着いた，静かな"),
    "vi": ("Vibrant", "活気がある，ワクワクさせる"),
    "an": ("Annoying", "騒々しい，イライラさせる"),
    "un": ("Uneventful", "これといった事がない，平穏無事な"),
    "ch": ("Chaotic", "無秩序な，雑然とした"),
    "mo": ("Monotonous", "単調な，退屈な"),
}

ATTRIBUTE_KEYS = tuple(ATTRIBUTE_LABELS)


class Scale(Enum):
    """Rating scale the attribute scores were collected on."""

    FIVE_POINT = 5
    SEVEN_POINT = 7

    @classmethod
    def from_points(cls, points: int) -> "Scale":
        for member in cls:
            if member.value == points:
                return member
        raise ValueError(f"unsupported scale: {points} (expected 5 or 7)")

    @property
    def midpoint(self) -> int:
        return (self.value + 1) // 2


@dataclass(frozen=True)
class AttributeScores:
    """One respondent's ratings for the eight soundscape attributes."""

    pl: int
    ev: int
    ca: int
    vi: int
    an: int
    un: int
    ch: int
    mo: int
    scale: Scale = Scale.SEVEN_POINT

    def __post_init__(self) -> None:
        for key in ATTRIBUTE_KEYS:
            value = getattr(self, key)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValueError(f"attribute {key} must be an integer, got {value!r}")
            if not 1 <= value <= self.scale.value:
                raise ValueError(
                    f"attribute {key} out of range 1..{self.scale.value}: {value}"
                )

    def as_dict(self) -> dict[str, int]:
        return {key: getattr(self, key) for key in ATTRIBUTE_KEYS}


@dataclass(frozen=True)
class ImpressionPair:
    """Normalized (pleasantness, eventfulness), each in [-1, 1]."""

    p: float
    e: float

    def __post_init__(self) -> None:
        if not (-1.0 <= self.p <= 1.0 and -1.0 <= self.e <= 1.0):
            raise ValueError(f"impressions out of [-1, 1]: ({self.p}, {self.e})")


def normalization_factor(scale: Scale | int) -> float:
    """Largest attainable numerator magnitude for the given rating scale.

    d = scale - 1 is the widest attribute-pair difference; the two diagonal
    pairs add another d * sqrt(2) through the cos(pi/4) projection.
    """
    if isinstance(scale, int):
        scale = Scale.from_points(scale)
    d = float(scale.value - 1)
    return d + math.sqrt(2.0 * d * d)


def _snap_unit(value: float) -> float:
    # The numerator and the factor round independently, so extreme corners can
    # overshoot +/-1 by an ulp; snap anything within 1e-12 of the boundary.
    if abs(abs(value) - 1.0) <= 1e-12:
        return math.copysign(1.0, value)
    return value


def impressions_from_attributes(attrs: AttributeScores) -> ImpressionPair:
    """Project the eight attribute scores onto the two impression axes."""
    n = normalization_factor(attrs.scale)
    p = ((attrs.pl - attrs.an) + COS_45 * ((attrs.ca - attrs.ch) + (attrs.vi - attrs.mo))) / n
    e = ((attrs.ev - attrs.un) + COS_45 * ((attrs.ch - attrs.ca) + (attrs.vi - attrs.mo))) / n
    return ImpressionPair(p=_snap_unit(p), e=_snap_unit(e))
