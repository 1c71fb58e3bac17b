"""Action spaces: the closed unit l2-ball or a finite set of vectors inside it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

_MEMBER_TOL = 1e-12


class UnknownActionError(ValueError):
    pass


@dataclass(frozen=True)
class UnitBall:
    d: int

    def __post_init__(self):
        if int(self.d) < 1:
            raise ValueError("UnitBall dimension must be positive")

    def to_dict(self) -> dict:
        return {"type": "unit_ball", "d": int(self.d)}


@dataclass(frozen=True, eq=False)
class FiniteActions:
    """Ordered finite action set; row k of ``actions`` is action k."""

    actions: np.ndarray

    def __post_init__(self):
        a = np.array(self.actions, dtype=float)
        if a.ndim != 2 or a.shape[0] == 0:
            raise ValueError("finite action set must be a nonempty (k, d) array")
        if np.any(np.linalg.norm(a, axis=1) > 1 + 1e-9):
            raise ValueError("finite actions must lie in the closed unit l2-ball")
        a.setflags(write=False)
        object.__setattr__(self, "actions", a)

    @property
    def d(self) -> int:
        return self.actions.shape[1]

    def __len__(self) -> int:
        return self.actions.shape[0]

    def index_of(self, w) -> int:
        hit = np.flatnonzero(np.all(np.abs(self.actions - np.asarray(w)) <= _MEMBER_TOL, axis=1))
        if hit.size == 0:
            raise UnknownActionError(f"unknown action {np.asarray(w)!r}")
        return int(hit[0])

    def indices_of(self, ws: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`index_of`; raises on any non-member row."""
        ws = np.atleast_2d(ws)
        match = np.all(np.abs(ws[:, None, :] - self.actions[None, :, :]) <= _MEMBER_TOL, axis=2)
        found = match.any(axis=1)
        if not found.all():
            bad = ws[np.flatnonzero(~found)[0]]
            raise UnknownActionError(f"unknown action {bad!r}")
        return match.argmax(axis=1)

    def to_dict(self) -> dict:
        return {"type": "finite", "actions": self.actions.tolist()}

    def __eq__(self, other):
        return isinstance(other, FiniteActions) and np.array_equal(self.actions, other.actions)

    __hash__ = None


ActionSpace = Union[UnitBall, FiniteActions]


def action_space_from_dict(obj: dict) -> ActionSpace:
    kind = obj.get("type")
    if kind == "unit_ball":
        return UnitBall(int(obj["d"]))
    if kind == "finite":
        return FiniteActions(np.asarray(obj["actions"], dtype=float))
    raise ValueError(f"unknown action space type {kind!r}")
