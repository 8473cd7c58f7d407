"""Keyword featurization of text queries into bounded context vectors."""

from __future__ import annotations

import hashlib
import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidArgument

_SPLIT = re.compile(r"[\W_]+", re.UNICODE)
_WS = re.compile(r"\s+", re.UNICODE)

SECTIONS = ("complexity", "drug", "protein", "clinical")
DEFAULT_FEATURES = ("length", "complexity", "drug", "protein", "clinical")


@dataclass(frozen=True)
class Query:
    text: str
    id: str = ""
    # Simulation-only ground truth; never passed to featurization or policies.
    archetype: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise InvalidArgument("query text must be non-empty")


@dataclass(frozen=True)
class Lexicon:
    complexity: frozenset[str]
    domains: dict[str, frozenset[str]]
    length_scale: float = 50.0

    def __post_init__(self) -> None:
        if not self.length_scale > 0:
            raise InvalidArgument("length_scale must be positive")
        for name, words in [("complexity", self.complexity), *self.domains.items()]:
            if not words:
                raise InvalidArgument(f"lexicon section [{name}] is empty")
            for w in words:
                if w != w.lower() or not w or _WS.search(w):
                    raise InvalidArgument(f"lexicon token {w!r} in [{name}] must be a single lowercase token")

    def digest(self) -> str:
        """Stable content hash; recorded in state files."""
        h = hashlib.sha256()
        h.update(f"length_scale={self.length_scale!r}\n".encode())
        for name, words in [("complexity", self.complexity), *sorted(self.domains.items())]:
            h.update(f"[{name}]\n".encode())
            for w in sorted(words):
                h.update(w.encode("utf-8") + b"\n")
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class FeatureSpec:
    names: tuple[str, ...] = DEFAULT_FEATURES

    @property
    def d(self) -> int:
        return len(self.names)

    def __post_init__(self) -> None:
        unknown = [n for n in self.names if n not in DEFAULT_FEATURES]
        if unknown:
            raise InvalidArgument(f"unknown features {unknown}")
        if not self.names:
            raise InvalidArgument("feature spec must name at least one feature")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return [t for t in _SPLIT.split(text.lower()) if t]


def normalize_text(text: str) -> str:
    return _WS.sub(" ", unicodedata.normalize("NFC", text)).strip()


def parse_lexicon(text: str, length_scale: float = 50.0) -> Lexicon:
    """Parse the line-oriented lexicon format (``[section]`` headers, ``#`` comments)."""
    sections: dict[str, set[str]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current not in SECTIONS:
                raise InvalidArgument(f"line {lineno}: unknown section [{current}]")
            sections.setdefault(current, set())
            continue
        if current is None:
            raise InvalidArgument(f"line {lineno}: token outside of any section")
        sections[current].add(line.lower())
    missing = [s for s in SECTIONS if not sections.get(s)]
    if missing:
        raise InvalidArgument(f"lexicon is missing sections {missing}")
    return Lexicon(
        complexity=frozenset(sections["complexity"]),
        domains={s: frozenset(sections[s]) for s in SECTIONS[1:]},
        length_scale=length_scale,
    )


def load_lexicon(path: str | Path | None = None, length_scale: float = 50.0) -> Lexicon:
    """Load a lexicon file, or the packaged default when ``path`` is None."""
    if path is None:
        text = resources.files("agentbandit.data").joinpath("default_lexicon.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_lexicon(text, length_scale)


def extract(query: Query | str, lexicon: Lexicon, spec: FeatureSpec = FeatureSpec()) -> np.ndarray:
    """Map a query to its context vector; every component lies in [0, 1].

    length is the whitespace-normalized character count over
    ``lexicon.length_scale`` (capped at 1); complexity is the fraction of the
    complexity lexicon present; each domain feature is ``min(hits / 2, 1)``
    where hits counts distinct domain keywords present.
    """
    text = query.text if isinstance(query, Query) else query
    norm = normalize_text(text)
    if not norm:
        raise InvalidArgument("query text must be non-empty")
    tokens = set(tokenize(norm))
    values = []
    for name in spec.names:
        if name == "length":
            values.append(min(len(norm) / lexicon.length_scale, 1.0))
        elif name == "complexity":
            values.append(len(lexicon.complexity & tokens) / len(lexicon.complexity))
        else:
            values.append(min(len(lexicon.domains[name] & tokens) / 2.0, 1.0))
    return np.array(values, dtype=float)
