"""Bundled word lists for the benchmark templates and the heuristic chunker."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load_words(name: str) -> tuple[str, ...]:
    """Load one bundled vocabulary (``colors``, ``objects``, ``clothing``,
    ``animals``) as a tuple of lowercase words."""
    text = resources.files("semshield.data").joinpath(f"{name}.txt").read_text("utf-8")
    return tuple(w.strip().lower() for w in text.splitlines() if w.strip())


def colors() -> tuple[str, ...]:
    return load_words("colors")


def objects() -> tuple[str, ...]:
    return load_words("objects")


def clothing() -> tuple[str, ...]:
    return load_words("clothing")


def animals() -> tuple[str, ...]:
    return load_words("animals")
