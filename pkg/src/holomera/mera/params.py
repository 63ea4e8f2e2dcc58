"""Gate angles of the homogeneous binary MERA with one qubit per bond."""

import json
from dataclasses import dataclass, field

import numpy as np

CELL_ANGLES = ("iso_ry_in", "iso_ry_anc", "iso_xy", "iso_yx", "dis_xy", "dis_yx")
TOP_ANGLES = ("top_xy", "top_ry_left", "top_ry_right")
FLAVORS = ("finite_T", "scale_invariant")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class MeraParams:
    """Angles of a T-layer MERA.

    ``cells[k]`` holds the six unit-cell angles of the transition from level
    ``k + 1`` down to level ``k`` (level 0 is the physical chain). A
    scale-invariant MERA stores a single shared row and ``n_layers`` sets how
    many times it is stacked. ``top`` holds the angles of the optional
    two-site top state; ``None`` means the top level is ``|0...0>``.
    """

    cells: np.ndarray
    n_layers: int = None
    top: np.ndarray = None
    flavor: str = "finite_T"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        cells = np.atleast_2d(np.asarray(self.cells, dtype=float))
        if cells.shape[1] != len(CELL_ANGLES):
            raise ValueError(f"unit cell needs {len(CELL_ANGLES)} angles, got shape {cells.shape}")
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown flavor {self.flavor!r}")
        if self.flavor == "scale_invariant" and cells.shape[0] != 1:
            raise ValueError("a scale-invariant MERA has exactly one shared unit cell")
        n_layers = self.n_layers
        if n_layers is None:
            n_layers = cells.shape[0]
        if self.flavor == "finite_T" and n_layers != cells.shape[0]:
            raise ValueError(f"finite_T MERA with {cells.shape[0]} cells cannot have {n_layers} layers")
        if not np.all(np.isfinite(cells)):
            raise ValueError("angles must be finite")
        top = self.top
        if top is not None:
            top = np.asarray(top, dtype=float).reshape(len(TOP_ANGLES))
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "n_layers", int(n_layers))
        object.__setattr__(self, "top", top)

    def cell(self, k: int) -> np.ndarray:
        """Angles of the transition from level ``k + 1`` to ``k``."""
        if not 0 <= k < self.n_layers:
            raise IndexError(f"layer {k} outside 0..{self.n_layers - 1}")
        return self.cells[0] if self.flavor == "scale_invariant" else self.cells[k]

    def with_layers(self, n_layers: int) -> "MeraParams":
        if self.flavor != "scale_invariant":
            raise ValueError("only a scale-invariant MERA can be restacked")
        return MeraParams(self.cells, n_layers, self.top, self.flavor, dict(self.meta))

    def with_top(self, top) -> "MeraParams":
        return MeraParams(self.cells, self.n_layers, top, self.flavor, dict(self.meta))

    def to_vector(self) -> np.ndarray:
        parts = [self.cells.reshape(-1)]
        if self.top is not None:
            parts.append(self.top)
        return np.concatenate(parts)

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "flavor": self.flavor,
            "n_layers": self.n_layers,
            "cells": [dict(zip(CELL_ANGLES, map(float, row))) for row in self.cells],
            "top": None if self.top is None else dict(zip(TOP_ANGLES, map(float, self.top))),
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d) -> "MeraParams":
        if "version" not in d:
            raise ValueError("MeraParams JSON must carry a 'version' field")
        if d["version"] != SCHEMA_VERSION:
            raise ValueError(f"unsupported MeraParams version {d['version']}")
        cells = [[row[name] for name in CELL_ANGLES] for row in d["cells"]]
        top = d.get("top")
        if top is not None:
            top = [top[name] for name in TOP_ANGLES]
        return cls(np.array(cells), d.get("n_layers"), top, d["flavor"], d.get("meta", {}))

    @classmethod
    def from_json(cls, text: str) -> "MeraParams":
        return cls.from_dict(json.loads(text))

    @classmethod
    def identity(cls, n_layers: int, flavor: str = "finite_T") -> "MeraParams":
        rows = 1 if flavor == "scale_invariant" else n_layers
        return cls(np.zeros((rows, len(CELL_ANGLES))), n_layers, None, flavor)
