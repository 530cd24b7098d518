"""Structured warnings emitted whenever a quantity is clamped or repaired."""

import warnings


class ClampWarning(UserWarning):
    """A computed quantity was clamped into its admissible range.

    ``quantity`` names what was clamped, ``raw`` is the value before clamping
    and ``clamped`` the value used downstream.
    """

    def __init__(self, quantity: str, raw: float, clamped: float, note: str = ""):
        self.quantity = quantity
        self.raw = float(raw)
        self.clamped = float(clamped)
        self.note = note
        msg = f"{quantity}: {self.raw:.6g} clamped to {self.clamped:.6g}"
        if note:
            msg += f" ({note})"
        super().__init__(msg)

    def as_dict(self) -> dict:
        return {"quantity": self.quantity, "raw": self.raw,
                "clamped": self.clamped, "note": self.note}


class DataWarning(UserWarning):
    """Input data is inconsistent but usable (e.g. rounded pulse totals)."""


def clamp(value: float, lo: float, hi: float, quantity: str, note: str = "") -> float:
    """Clamp ``value`` to ``[lo, hi]``, warning if it moved."""
    v = float(value)
    c = min(max(v, lo), hi)
    if c != v:
        warnings.warn(ClampWarning(quantity, v, c, note), stacklevel=2)
    return c
