"""Bit-string genotype and its decoding into network specifications.

A genotype is a fixed string of 20 bits.  Nine fields are packed
most-significant-bit first, in the order listed below; each field's integer
value indexes a published list of admissible settings, so every one of the
2^20 bit strings decodes to a buildable network (no lethal genotypes).

Layout (offsets in bits)::

    num_modules         0..1   {1, 2, 4, 8}
    layers_per_module   2..3   {1, 2, 4, 8}
    filters             4..5   {8, 12, 16, 24}
    pool_size           6..7   {1, 2, 3, 4}
    highway_activation  8..9   {elu, relu, prelu, softsign}
    dense_activation   10..11  {elu, relu, prelu, softsign}
    dense1_units       12..13  {32, 64, 128, 256}
    dense2_units       14..15  {32, 64, 128, 256}
    learning_rate      16..19  16-point log grid over [1e-4, 1e-1]

The layout is frozen: changing offsets, widths, or list contents breaks
every stored genotype and is a major-version event.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

GENOTYPE_BITS = 20

ACTIVATIONS = ("elu", "relu", "prelu", "softsign")

# 16 learning rates, log-spaced inclusive of both endpoints.
LEARNING_RATE_GRID = tuple(10.0 ** (-4.0 + 3.0 * i / 15.0) for i in range(16))


@dataclass(frozen=True)
class NetworkSpec:
    """Decoded phenotype: everything needed to build one highway network."""

    num_modules: int
    layers_per_module: int
    filters: int
    pool_size: int
    highway_activation: str
    dense_activation: str
    dense1_units: int
    dense2_units: int
    learning_rate: float

    def to_dict(self) -> dict:
        return {
            "num_modules": self.num_modules,
            "layers_per_module": self.layers_per_module,
            "filters": self.filters,
            "pool_size": self.pool_size,
            "highway_activation": self.highway_activation,
            "dense_activation": self.dense_activation,
            "dense1_units": self.dense1_units,
            "dense2_units": self.dense2_units,
            "learning_rate": self.learning_rate,
        }


@dataclass(frozen=True)
class LayoutField:
    name: str
    offset: int
    width: int
    values: tuple


@dataclass(frozen=True)
class GenotypeLayout:
    fields: tuple[LayoutField, ...]

    @property
    def total_width(self) -> int:
        return sum(f.width for f in self.fields)

    def to_json(self) -> str:
        doc = [
            {"name": f.name, "offset": f.offset, "width": f.width,
             "values": list(f.values)}
            for f in self.fields
        ]
        return json.dumps(doc, indent=2)


_FIELD_LISTS: tuple[tuple[str, tuple], ...] = (
    ("num_modules", (1, 2, 4, 8)),
    ("layers_per_module", (1, 2, 4, 8)),
    ("filters", (8, 12, 16, 24)),
    ("pool_size", (1, 2, 3, 4)),
    ("highway_activation", ACTIVATIONS),
    ("dense_activation", ACTIVATIONS),
    ("dense1_units", (32, 64, 128, 256)),
    ("dense2_units", (32, 64, 128, 256)),
    ("learning_rate", LEARNING_RATE_GRID),
)


def _build_layout() -> GenotypeLayout:
    fields = []
    offset = 0
    for name, values in _FIELD_LISTS:
        width = (len(values) - 1).bit_length()
        fields.append(LayoutField(name, offset, width, tuple(values)))
        offset += width
    layout = GenotypeLayout(tuple(fields))
    assert layout.total_width == GENOTYPE_BITS
    return layout


_LAYOUT = _build_layout()


def describe_layout() -> GenotypeLayout:
    """The canonical bit layout, stable within a major release."""
    return _LAYOUT


def search_space_size() -> int:
    """Number of distinct genotypes (product of all field list lengths)."""
    size = 1
    for f in _LAYOUT.fields:
        size *= len(f.values)
    return size


def decode(bits: Sequence[int]) -> NetworkSpec:
    """Map a 20-bit genotype to its :class:`NetworkSpec`.

    Each field's bits are read most-significant-first as an index into that
    field's value list.  Total on all 2^20 inputs.
    """
    if len(bits) != GENOTYPE_BITS:
        raise ValueError(
            f"genotype must have exactly {GENOTYPE_BITS} bits, got {len(bits)}"
        )
    values = {}
    for f in _LAYOUT.fields:
        idx = 0
        for b in bits[f.offset:f.offset + f.width]:
            idx = (idx << 1) | int(b)
        values[f.name] = f.values[idx]
    return NetworkSpec(**values)


def bits_to_str(bits: Sequence[int]) -> str:
    return "".join("1" if int(b) else "0" for b in bits)


def bits_from_str(s: str) -> tuple[int, ...]:
    if not s or any(c not in "01" for c in s):
        raise ValueError(f"genotype string must be non-empty 0/1 characters, got {s!r}")
    return tuple(int(c) for c in s)
