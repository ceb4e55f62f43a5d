"""AOG parameters, parse trees, per-image assembly problems and scoring.

Scoring convention: every vertex contributes exactly once to the global score. Vertices
reached from the root through visible compositions contribute their local score; every
other vertex is invisible and contributes its invisibility bias. The recursive form
(``global_score``) and the linear form ``W . Phi`` (``feature_vector``) agree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from ..core import InvalidInputError, LabelMap, SegmentMask, iou, mask_union
from ..features import GEOM_DIM, Dictionary, pair_geometry, pairwise_code
from ..ranking import Candidate, SelectedPool
from .structure import AogStructure

MODEL_VERSION = 1


class InvalidTreeError(ValueError):
    """A parse tree that violates the visibility or indexing rules of the structure."""


# --- parameters ------------------------------------------------------------------


@dataclass
class ParamLayout:
    """Stable mapping from named parameter blocks to slices of the flat weight vector."""

    structure: AogStructure
    n_pp: int = 8
    shared_side: bool = True

    @cached_property
    def entries(self) -> dict[tuple, tuple[int, tuple[int, ...]]]:
        s = self.structure
        out: dict[tuple, tuple[int, tuple[int, ...]]] = {}
        pos = 0

        def add(key, shape):
            nonlocal pos
            out[key] = (pos, shape)
            pos += int(np.prod(shape))

        for p in range(s.n_parts):
            add(("w", p), (s.n_types,))
        for v in range(s.n_vertices):
            add(("b", v), (s.n_states(v),))
            add(("b0", v), (1,))
        for c in range(s.n_parts, s.n_vertices):
            for z in range(1, s.n_states(c) + 1):
                for mu in s.children(c, z):
                    add(("vert", c, z, mu), (s.n_states(mu), GEOM_DIM))
        for c in range(s.n_parts, s.n_vertices):
            for i, (p1, p2) in enumerate(s.pairs(c)):
                shape = (2 * self.n_pp,) if self.shared_side else (s.n_types, s.n_types, 2 * self.n_pp)
                add(("side", c, i), shape)
        self._dim = pos
        return out

    @property
    def dim(self) -> int:
        self.entries
        return self._dim

    def slice(self, key) -> tuple[slice, tuple[int, ...]]:
        off, shape = self.entries[key]
        return slice(off, off + int(np.prod(shape))), shape

    def index(self, key, *sub) -> int:
        """Flat index of element ``sub`` inside block ``key``."""
        off, shape = self.entries[key]
        return off + int(np.ravel_multi_index(sub, shape)) if sub else off

    def to_list(self) -> list[dict]:
        return [{"key": list(k), "offset": o, "shape": list(sh)} for k, (o, sh) in self.entries.items()]


@dataclass
class AogParams:
    layout: ParamLayout
    W: np.ndarray = None

    def __post_init__(self):
        if self.W is None:
            self.W = np.zeros(self.layout.dim)
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.shape != (self.layout.dim,):
            raise InvalidInputError(f"weight vector has shape {self.W.shape}, layout needs ({self.layout.dim},)")
        if not np.all(np.isfinite(self.W)):
            raise InvalidInputError("weights must be finite")

    @property
    def structure(self) -> AogStructure:
        return self.layout.structure

    def block(self, *key) -> np.ndarray:
        sl, shape = self.layout.slice(tuple(key))
        return self.W[sl].reshape(shape)

    def unary_w(self, p: int, z: int) -> float:
        return float(self.block("w", p)[z - 1])

    def bias(self, v: int, z: int) -> float:
        return float(self.block("b0", v)[0]) if z == 0 else float(self.block("b", v)[z - 1])

    def vertical(self, c: int, z: int, mu: int, z_mu: int) -> np.ndarray:
        return self.block("vert", c, z, mu)[z_mu - 1]

    def side(self, c: int, i: int, z1: int, z2: int) -> np.ndarray:
        blk = self.block("side", c, i)
        return blk if self.layout.shared_side else blk[z1 - 1, z2 - 1]

    def flatten(self) -> np.ndarray:
        return self.W.copy()

    @classmethod
    def unflatten(cls, layout: ParamLayout, vec) -> "AogParams":
        return cls(layout, np.array(vec, dtype=np.float64))

    @classmethod
    def random(cls, layout: ParamLayout, rng, scale: float = 1.0) -> "AogParams":
        return cls(layout, rng.normal(scale=scale, size=layout.dim))

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        doc = {
            "version": MODEL_VERSION,
            "structure": self.structure.to_dict(),
            "n_pp": self.layout.n_pp,
            "shared_side": self.layout.shared_side,
            "layout": self.layout.to_list(),
            "W": self.W.tolist(),
            **(extra or {}),
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path: str | Path) -> "AogParams":
        doc = json.loads(Path(path).read_text())
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported AOG model version {doc.get('version')}")
        layout = ParamLayout(AogStructure.from_dict(doc["structure"]), doc["n_pp"], doc["shared_side"])
        if layout.to_list() != doc["layout"]:
            raise ValueError("stored layout does not match the structure")
        return cls(layout, np.array(doc["W"]))


# --- problems and trees ---------------------------------------------------------------


@dataclass
class AssemblyProblem:
    """Everything inference needs for one image: candidates, pair codes and (optionally) ground truth.

    ``candidates[p]`` is the flat top-n list of part ``p``; the candidate with
    ``part_type == z`` at position ``y - 1`` among those of its type is ``s^{p,z}_y``.
    """

    structure: AogStructure
    candidates: list[list[Candidate]]
    pair_codes: dict[tuple[int, int], np.ndarray]  # (p1, p2) -> (n1, n2, 2 n_pp)
    shape: tuple[int, int]
    n_pp: int = 8
    gt_masks: list[SegmentMask] | None = None

    @property
    def diag(self) -> float:
        return float(np.hypot(self.shape[0], self.shape[1]))

    @cached_property
    def y_of(self) -> list[list[int]]:
        """1-based within-type position of every flat candidate."""
        out = []
        for cands in self.candidates:
            counts: dict[int, int] = {}
            ys = []
            for c in cands:
                counts[c.part_type] = counts.get(c.part_type, 0) + 1
                ys.append(counts[c.part_type])
            out.append(ys)
        return out

    def lookup(self, p: int, z: int, y: int) -> int:
        """Flat index of ``s^{p,z}_y``."""
        for i, c in enumerate(self.candidates[p]):
            if c.part_type == z and self.y_of[p][i] == y:
                return i
        raise InvalidTreeError(f"part {p} has no candidate y={y} of type {z}")

    def pair_code(self, p1: int, i1: int, p2: int, i2: int) -> np.ndarray:
        codes = self.pair_codes.get((p1, p2))
        if codes is None:
            return np.zeros(2 * self.n_pp)
        return codes[i1, i2]

    @cached_property
    def gt_iou(self) -> list[np.ndarray] | None:
        """``gt_iou[p][i]`` = IoU of candidate i with the ground-truth mask of part p."""
        if self.gt_masks is None:
            return None
        return [np.array([iou(self.gt_masks[p], c.segment) for c in cands]) for p, cands in enumerate(self.candidates)]

    @cached_property
    def gt_null_iou(self) -> np.ndarray | None:
        """IoU of the null segment with each part's ground truth: 1 when the part is absent."""
        if self.gt_masks is None:
            return None
        return np.array([1.0 if m.area == 0 else 0.0 for m in self.gt_masks])


def build_problem(
    structure: AogStructure,
    selected: SelectedPool,
    pair_dicts: dict[tuple[str, str], Dictionary],
    lam: float,
    shape: tuple[int, int],
    n_pp: int = 8,
    gt: LabelMap | None = None,
) -> AssemblyProblem:
    cands = [list(selected.candidates.get(name, [])) for name in structure.parts]
    codes = {}
    for c in range(structure.n_parts, structure.n_vertices):
        for p1, p2 in structure.pairs(c):
            key = (structure.parts[p1], structure.parts[p2])
            d = pair_dicts.get(key)
            if d is None or (p1, p2) in codes:
                continue
            arr = np.zeros((len(cands[p1]), len(cands[p2]), 2 * n_pp))
            for i, a in enumerate(cands[p1]):
                for j, b in enumerate(cands[p2]):
                    arr[i, j] = pairwise_code(a.pbg, b.pbg, d, lam, n_pp)
            codes[(p1, p2)] = arr
    gt_masks = None
    if gt is not None:
        gt_masks = [gt.part_mask(p + 1) for p in range(structure.n_parts)]
    return AssemblyProblem(structure, cands, codes, shape, n_pp, gt_masks)


@dataclass
class ParseTree:
    """Per-vertex type/configuration ``z`` and segment index ``y`` (0 = invisible).

    For compositions ``y`` is 1 when visible: their segment is the union of the children's.
    """

    z: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)

    @classmethod
    def invisible(cls, structure: AogStructure) -> "ParseTree":
        return cls(np.zeros(structure.n_vertices, np.int64), np.zeros(structure.n_vertices, np.int64))

    def key(self) -> tuple:
        return tuple(self.z.tolist()) + tuple(self.y.tolist())

    def __eq__(self, other) -> bool:
        return isinstance(other, ParseTree) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def to_dict(self) -> dict:
        return {"z": self.z.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ParseTree":
        return cls(np.array(d["z"]), np.array(d["y"]))


def active_vertices(tree: ParseTree, structure: AogStructure) -> list[int]:
    """Vertices the recursive score visits: the root and children of visible compositions."""
    out = []
    stack = [structure.root_index]
    while stack:
        v = stack.pop()
        out.append(v)
        if not structure.is_part(v) and tree.z[v] != 0:
            stack.extend(reversed(structure.children(v, int(tree.z[v]))))
    return out


def check_tree(tree: ParseTree, problem: AssemblyProblem) -> None:
    s = problem.structure
    if tree.z.shape != (s.n_vertices,) or tree.y.shape != (s.n_vertices,):
        raise InvalidTreeError("tree vectors do not match the structure")
    visited = set(active_vertices(tree, s))
    for v in range(s.n_vertices):
        z, y = int(tree.z[v]), int(tree.y[v])
        if (z == 0) != (y == 0):
            raise InvalidTreeError(f"vertex {s.names[v]}: z={z} and y={y} disagree on visibility")
        if not 0 <= z <= s.n_states(v):
            raise InvalidTreeError(f"vertex {s.names[v]}: state {z} out of range")
        if v not in visited and z != 0:
            raise InvalidTreeError(f"vertex {s.names[v]} is visible under an invisible or unselected parent")
        if z == 0:
            continue
        if s.is_part(v):
            problem.lookup(v, z, y)
        else:
            if y != 1:
                raise InvalidTreeError(f"composition {s.names[v]} must have y=1 when visible")
            if all(tree.z[ch] == 0 for ch in s.children(v, z)):
                raise InvalidTreeError(f"composition {s.names[v]} is visible with no visible child")


def leaf_segment(tree: ParseTree, problem: AssemblyProblem, p: int) -> SegmentMask:
    z, y = int(tree.z[p]), int(tree.y[p])
    if z == 0:
        return SegmentMask.null(problem.shape[1], problem.shape[0])
    return problem.candidates[p][problem.lookup(p, z, y)].segment


def vertex_masks(tree: ParseTree, problem: AssemblyProblem) -> dict[int, SegmentMask]:
    """Segment of every vertex; compositions are unions of their visible children."""
    s = problem.structure
    out: dict[int, SegmentMask] = {}
    null = SegmentMask.null(problem.shape[1], problem.shape[0])

    def mask(v: int) -> SegmentMask:
        if v in out:
            return out[v]
        if tree.z[v] == 0:
            m = null
        elif s.is_part(v):
            m = leaf_segment(tree, problem, v)
        else:
            m = mask_union([mask(ch) for ch in s.children(v, int(tree.z[v]))])
        out[v] = m
        return m

    for v in range(s.n_vertices):
        mask(v)
    return out


def _subtree_parts(tree: ParseTree, structure: AogStructure, c: int) -> set[int]:
    out = set()
    stack = [c]
    while stack:
        v = stack.pop()
        if tree.z[v] == 0:
            continue
        if structure.is_part(v):
            out.add(v)
        else:
            stack.extend(structure.children(v, int(tree.z[v])))
    return out


# --- scores ---------------------------------------------------------------------------


def leaf_score(p: int, y: int, z: int, params: AogParams, g: float | None) -> float:
    """``b_z + w_z * g`` for a visible leaf, ``b_0`` for an invisible one."""
    if z == 0:
        return params.bias(p, 0)
    if y == 0 or g is None:
        raise InvalidTreeError(f"leaf {p}: visible type {z} needs a segment")
    return params.bias(p, z) + params.unary_w(p, z) * g


def composition_score(
    c: int,
    z: int,
    child_scores: dict[int, float],
    params: AogParams,
    masks: dict[int, SegmentMask],
    child_states: dict[int, int],
    side_pairs: list[tuple[int, int, np.ndarray]],
    diag: float,
) -> float:
    """Bias + children's scores + vertical geometry terms + side-way pair terms.

    ``side_pairs`` holds ``(index into R_c, z1, z2, code)`` only for pairs whose two
    endpoints are visible; other pairs contribute nothing.
    """
    if z == 0:
        return params.bias(c, 0)
    s = params.structure
    kids = s.children(c, z)
    missing = [k for k in kids if k not in child_scores or k not in child_states]
    if missing:
        raise RuntimeError(f"children {missing} of composition {c} were not scored")
    total = params.bias(c, z) + sum(child_scores[k] for k in kids)
    for mu in kids:
        zm = child_states[mu]
        if zm == 0:
            continue
        total += float(params.vertical(c, z, mu, zm) @ pair_geometry(masks[c], masks[mu], diag))
    for i, z1, z2, code in side_pairs:
        total += float(params.side(c, i, z1, z2) @ code)
    return total


def _side_terms(tree: ParseTree, problem: AssemblyProblem, c: int) -> list:
    s = problem.structure
    present = _subtree_parts(tree, s, c)
    out = []
    for i, (p1, p2) in enumerate(s.pairs(c)):
        if p1 in present and p2 in present:
            i1 = problem.lookup(p1, int(tree.z[p1]), int(tree.y[p1]))
            i2 = problem.lookup(p2, int(tree.z[p2]), int(tree.y[p2]))
            out.append((i, int(tree.z[p1]), int(tree.z[p2]), problem.pair_code(p1, i1, p2, i2)))
    return out


def global_score(tree: ParseTree, problem: AssemblyProblem, params: AogParams) -> float:
    """Recursive bottom-up score of the whole tree."""
    check_tree(tree, problem)
    s = problem.structure
    masks = vertex_masks(tree, problem)
    visited: set[int] = set()

    def f(v: int) -> float:
        visited.add(v)
        z = int(tree.z[v])
        if s.is_part(v):
            g = None
            if z != 0:
                g = problem.candidates[v][problem.lookup(v, z, int(tree.y[v]))].score
            return leaf_score(v, int(tree.y[v]), z, params, g)
        if z == 0:
            return params.bias(v, 0)
        kids = s.children(v, z)
        scores = {k: f(k) for k in kids}
        states = {k: int(tree.z[k]) for k in kids}
        return composition_score(v, z, scores, params, masks, states, _side_terms(tree, problem, v), problem.diag)

    total = f(s.root_index)
    for v in range(s.n_vertices):
        if v not in visited:
            total += params.bias(v, 0)
    return total


@dataclass
class SparseVector:
    dim: int
    entries: dict[int, float] = field(default_factory=dict)

    def add(self, i: int, value: float) -> None:
        self.entries[i] = self.entries.get(i, 0.0) + float(value)

    def add_block(self, start: int, values) -> None:
        for k, v in enumerate(np.ravel(values)):
            if v != 0.0:
                self.add(start + k, v)

    def dot(self, w: np.ndarray) -> float:
        return float(sum(w[i] * v for i, v in self.entries.items()))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        for i, v in self.entries.items():
            out[i] = v
        return out

    @property
    def nonzero(self) -> list[int]:
        return sorted(i for i, v in self.entries.items() if v != 0.0)


def feature_vector(tree: ParseTree, problem: AssemblyProblem, layout: ParamLayout) -> SparseVector:
    """Joint feature map Phi(tree) in the parameter layout, so ``score = W . Phi``."""
    check_tree(tree, problem)
    s = problem.structure
    phi = SparseVector(layout.dim)
    visited = set(active_vertices(tree, s))
    masks = vertex_masks(tree, problem)
    for v in range(s.n_vertices):
        z = int(tree.z[v])
        if v not in visited or z == 0:
            phi.add(layout.index(("b0", v), 0), 1.0)
            continue
        phi.add(layout.index(("b", v), z - 1), 1.0)
        if s.is_part(v):
            g = problem.candidates[v][problem.lookup(v, z, int(tree.y[v]))].score
            phi.add(layout.index(("w", v), z - 1), g)
            continue
        for mu in s.children(v, z):
            zm = int(tree.z[mu])
            if zm == 0:
                continue
            phi.add_block(layout.index(("vert", v, z, mu), zm - 1, 0), pair_geometry(masks[v], masks[mu], problem.diag))
        for i, z1, z2, code in _side_terms(tree, problem, v):
            start = layout.index(("side", v, i), 0) if layout.shared_side else layout.index(("side", v, i), z1 - 1, z2 - 1, 0)
            phi.add_block(start, code)
    return phi


# --- loss --------------------------------------------------------------------------


def delta(tree: ParseTree, problem: AssemblyProblem) -> float:
    """Sum over parts of IoU between the chosen segment and the ground-truth part mask."""
    if problem.gt_masks is None:
        raise InvalidInputError("problem has no ground truth")
    total = 0.0
    for p in range(problem.structure.n_parts):
        z = int(tree.z[p])
        if z == 0:
            total += float(problem.gt_null_iou[p])
        else:
            total += float(problem.gt_iou[p][problem.lookup(p, z, int(tree.y[p]))])
    return total


def loss(oracle: ParseTree, hyp: ParseTree, problem: AssemblyProblem) -> float:
    """Relative loss ``delta(oracle) - delta(hyp)``; non-negative when ``oracle`` is optimal."""
    return delta(oracle, problem) - delta(hyp, problem)


def tree_to_labelmap(tree: ParseTree, problem: AssemblyProblem) -> LabelMap:
    """Paint visible leaf segments in the structure's priority order (last painted wins)."""
    s = problem.structure
    h, w = problem.shape
    out = np.zeros((h, w), dtype=np.int64)
    for p in s.paint_priority:
        if tree.z[p] == 0:
            continue
        m = leaf_segment(tree, problem, p)
        out[m.bits] = p + 1
    return LabelMap(out)
