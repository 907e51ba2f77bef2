"""Embedded reference values for the benchmark tables and comparison helpers."""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from math import floor, log10

__all__ = ["load_reference", "tolerances", "relative_error", "round_sigfigs"]


@lru_cache(maxsize=1)
def load_reference() -> dict:
    with resources.files("schwarzq.data").joinpath("reference_tables.json").open() as fh:
        return json.load(fh)


def tolerances() -> dict:
    return load_reference()["tolerances"]


def relative_error(value: float, ref: float) -> float:
    return abs(value - ref) / abs(ref)


def round_sigfigs(x: float, n: int) -> float:
    if x == 0:
        return 0.0
    return round(x, -int(floor(log10(abs(x)))) + (n - 1))
