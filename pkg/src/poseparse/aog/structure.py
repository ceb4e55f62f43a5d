"""And-Or graph structure: parts (leaves), compositions and their alternative child sets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path


class TaxonomyError(ValueError):
    """Raised for malformed, cyclic or orphaned taxonomies."""


@dataclass(frozen=True)
class Composition:
    name: str
    configs: tuple[tuple[str, ...], ...]
    pairs: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class AogStructure:
    """Vertices are numbered parts first (``0..P-1``), then compositions (``P..P+C-1``).

    Part ``i`` corresponds to label value ``i + 1`` in label maps.
    """

    parts: tuple[str, ...]
    compositions: tuple[Composition, ...]
    root: str
    n_types: int = 6
    skin_parts: tuple[str, ...] = ()
    paint_order: tuple[str, ...] = ()
    aliases: dict = field(default_factory=dict)

    def __post_init__(self):
        self._validate()

    # --- indexing -----------------------------------------------------------

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    @property
    def n_vertices(self) -> int:
        return len(self.parts) + len(self.compositions)

    @cached_property
    def index(self) -> dict[str, int]:
        names = list(self.parts) + [c.name for c in self.compositions]
        return {n: i for i, n in enumerate(names)}

    @cached_property
    def names(self) -> tuple[str, ...]:
        return tuple(self.parts) + tuple(c.name for c in self.compositions)

    def is_part(self, v: int) -> bool:
        return v < self.n_parts

    def comp(self, v: int) -> Composition:
        return self.compositions[v - self.n_parts]

    def n_states(self, v: int) -> int:
        """Number of non-invisible states: part types for leaves, configurations for compositions."""
        return self.n_types if self.is_part(v) else len(self.comp(v).configs)

    def children(self, v: int, z: int) -> tuple[int, ...]:
        """Child vertices of composition ``v`` under configuration ``z`` (1-based)."""
        return self._children[v][z - 1]

    def pairs(self, v: int) -> tuple[tuple[int, int], ...]:
        return self._pairs[v]

    @cached_property
    def _children(self) -> dict[int, tuple[tuple[int, ...], ...]]:
        return {
            self.index[c.name]: tuple(tuple(self.index[n] for n in cfg) for cfg in c.configs)
            for c in self.compositions
        }

    @cached_property
    def _pairs(self) -> dict[int, tuple[tuple[int, int], ...]]:
        return {self.index[c.name]: tuple((self.index[a], self.index[b]) for a, b in c.pairs) for c in self.compositions}

    @property
    def root_index(self) -> int:
        return self.index[self.root]

    @cached_property
    def cover(self) -> dict[int, frozenset[int]]:
        """Vertex plus every vertex reachable below it under any configuration."""
        out: dict[int, frozenset[int]] = {}

        def visit(v: int) -> frozenset[int]:
            if v in out:
                return out[v]
            s = {v}
            if not self.is_part(v):
                for cfg in self._children[v]:
                    for ch in cfg:
                        s |= visit(ch)
            out[v] = frozenset(s)
            return out[v]

        for v in range(self.n_vertices):
            visit(v)
        return out

    @cached_property
    def bottom_up(self) -> tuple[int, ...]:
        """Compositions ordered so every child composition precedes its parents."""
        order: list[int] = []
        seen: set[int] = set()

        def visit(v: int) -> None:
            if v in seen or self.is_part(v):
                return
            seen.add(v)
            for cfg in self._children[v]:
                for ch in cfg:
                    visit(ch)
            order.append(v)

        for v in range(self.n_parts, self.n_vertices):
            visit(v)
        return tuple(order)

    @cached_property
    def part_labels(self) -> dict[str, int]:
        return {name: i + 1 for i, name in enumerate(self.parts)}

    def label_of(self, name: str) -> int | None:
        """Label value a rendered part name maps to (following aliases); ``None`` if dropped."""
        name = self.aliases.get(name, name)
        return self.part_labels.get(name)

    @cached_property
    def paint_priority(self) -> tuple[int, ...]:
        """Part indices in painting order (last painted wins overlaps)."""
        order = [self.index[n] for n in self.paint_order if n in self.index]
        rest = [p for p in range(self.n_parts) if p not in order]
        return tuple(rest + order)

    # --- validation ---------------------------------------------------------

    def _validate(self) -> None:
        names = list(self.parts) + [c.name for c in self.compositions]
        if len(set(names)) != len(names):
            raise TaxonomyError("vertex names must be unique")
        if not self.parts:
            raise TaxonomyError("taxonomy needs at least one part")
        if self.n_types < 1:
            raise TaxonomyError("n_types must be >= 1")
        known = set(names)
        comp_names = {c.name for c in self.compositions}
        if self.root not in comp_names:
            raise TaxonomyError(f"root {self.root!r} is not a composition")
        for c in self.compositions:
            if not c.configs:
                raise TaxonomyError(f"composition {c.name!r} has no configurations")
            for cfg in c.configs:
                if not cfg or len(set(cfg)) != len(cfg):
                    raise TaxonomyError(f"composition {c.name!r} has an empty or repeated child set")
                for ch in cfg:
                    if ch not in known:
                        raise TaxonomyError(f"composition {c.name!r} references unknown vertex {ch!r}")
        self._check_acyclic()
        parented = {ch for c in self.compositions for cfg in c.configs for ch in cfg}
        roots = [n for n in comp_names if n not in parented]
        if roots != [self.root]:
            raise TaxonomyError(f"expected the single root {self.root!r}, found parentless {sorted(roots)}")
        reach = self.cover[self.root_index]
        orphans = [n for n in names if self.index[n] not in reach]
        if orphans:
            raise TaxonomyError(f"vertices unreachable from root: {orphans}")
        for c in self.compositions:
            v = self.index[c.name]
            for cfg in self._children[v]:
                seen: set[int] = set()
                for ch in cfg:
                    if seen & self.cover[ch]:
                        raise TaxonomyError(f"children of {c.name!r} overlap within one configuration")
                    seen |= self.cover[ch]
            below = self.cover[v] - {v}
            for a, b in c.pairs:
                if a not in self.parts or b not in self.parts:
                    raise TaxonomyError(f"adjacent pair ({a}, {b}) of {c.name!r} must name parts")
                if self.index[a] not in below and self.index[b] not in below:
                    raise TaxonomyError(f"pair ({a}, {b}) has no descendant of {c.name!r}")
        for n in self.paint_order:
            if n not in self.parts:
                raise TaxonomyError(f"paint_order names unknown part {n!r}")

    def _check_acyclic(self) -> None:
        edges = {c.name: {ch for cfg in c.configs for ch in cfg} for c in self.compositions}
        state: dict[str, int] = {}

        def visit(n: str) -> None:
            st = state.get(n, 0)
            if st == 1:
                raise TaxonomyError(f"cycle through {n!r}")
            if st == 2:
                return
            state[n] = 1
            for ch in edges.get(n, ()):
                visit(ch)
            state[n] = 2

        for n in edges:
            visit(n)

    # --- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "parts": list(self.parts),
            "n_types": self.n_types,
            "compositions": [
                {"name": c.name, "configs": [list(cfg) for cfg in c.configs], "pairs": [list(p) for p in c.pairs]}
                for c in self.compositions
            ],
            "root": self.root,
            "skin_parts": list(self.skin_parts),
            "paint_order": list(self.paint_order),
            "aliases": dict(self.aliases),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AogStructure":
        try:
            comps = tuple(
                Composition(
                    name=c["name"],
                    configs=tuple(tuple(cfg) for cfg in c["configs"]),
                    pairs=tuple((a, b) for a, b in c.get("pairs", [])),
                )
                for c in d["compositions"]
            )
            return cls(
                parts=tuple(d["parts"]),
                compositions=comps,
                root=d["root"],
                n_types=int(d.get("n_types", 6)),
                skin_parts=tuple(d.get("skin_parts", ())),
                paint_order=tuple(d.get("paint_order", ())),
                aliases=dict(d.get("aliases", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, TaxonomyError):
                raise
            raise TaxonomyError(f"malformed taxonomy: {exc}") from exc


def load_taxonomy(path: str | Path | None = None) -> dict:
    if path is None:
        text = resources.files("poseparse").joinpath("data/taxonomy.json").read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


def build_default_aog(taxonomy: dict | str | Path | None = None, n_types: int | None = None) -> AogStructure:
    """Structure from a taxonomy dict or file; the packaged 11-part taxonomy by default."""
    if taxonomy is None or isinstance(taxonomy, (str, Path)):
        taxonomy = load_taxonomy(taxonomy)
    if n_types is not None:
        taxonomy = dict(taxonomy, n_types=n_types)
    return AogStructure.from_dict(taxonomy)
