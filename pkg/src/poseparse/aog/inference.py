"""Greedy-pruned dynamic programming over the AOG.

Every vertex keeps a table of its best ``k`` states. A state stores the full assignment
(``Z``, ``Y``) restricted to the vertex's cover, the chosen leaf candidates, the union
mask and a score relative to "everything in the cover invisible". Compositions score the
cross product of their children's tables for every configuration. Because states carry
their assignments, the root argmax already is the backtracked tree.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from .model import AogParams, ParamLayout, AssemblyProblem, ParseTree, check_tree, delta

DEFAULT_K = 10


@numba.njit(cache=True)
def _moments(by, lut):
    m, nb = by.shape
    area = np.zeros(m)
    sx = np.zeros(m)
    sy = np.zeros(m)
    for r in range(m):
        a = 0.0
        x = 0.0
        y = 0.0
        for i in range(nb):
            b = by[r, i]
            if b:
                a += lut[i, b, 2]
                x += lut[i, b, 0]
                y += lut[i, b, 1]
        area[r] = a
        sx[r] = x
        sy[r] = y
    return area, sx, sy


@dataclass
class _Table:
    score: np.ndarray  # (m,)
    Z: np.ndarray  # (m, V)
    Y: np.ndarray  # (m, V)
    leaf: np.ndarray  # (m, P) flat candidate index, -1 if none
    bits: np.ndarray  # (m, n_words) packed uint64 mask
    area: np.ndarray  # (m,)
    sx: np.ndarray  # (m,) sum of column indices
    sy: np.ndarray  # (m,) sum of row indices

    def take(self, idx) -> "_Table":
        return _Table(*(a[idx] for a in (self.score, self.Z, self.Y, self.leaf, self.bits, self.area, self.sx, self.sy)))

    @staticmethod
    def concat(tables: list["_Table"]) -> "_Table":
        fields = ("score", "Z", "Y", "leaf", "bits", "area", "sx", "sy")
        return _Table(*(np.concatenate([getattr(t, f) for t in tables]) for f in fields))


def _rank(t: _Table, k: int, ctx=None) -> _Table:
    """Top ``k`` states by score; ties broken by the smallest (Z, Y) tuple."""
    if ctx is not None and t.score.shape[0] > k:
        ctx.truncated = True
    keys = [t.Y[:, j] for j in range(t.Y.shape[1] - 1, -1, -1)]
    keys += [t.Z[:, j] for j in range(t.Z.shape[1] - 1, -1, -1)]
    keys.append(-t.score)
    order = np.lexsort(keys)
    return t.take(order[:k])


@lru_cache(maxsize=8)
def _byte_lut(h: int, w: int) -> np.ndarray:
    """Per packed byte position and byte value: summed x, summed y and count of the set pixels."""
    hw = h * w
    n_bytes = ((hw + 63) // 64) * 8
    pix = np.arange(n_bytes * 8).reshape(n_bytes, 8)
    yy, xx = np.divmod(pix, w)
    valid = pix < hw
    bitset = (np.arange(256)[:, None] >> np.arange(8)[None, :]) & 1  # little bit order
    lut = np.stack([(bitset @ (xx * valid).T).T, (bitset @ (yy * valid).T).T, (bitset @ valid.T).T], axis=-1)
    lut = lut.astype(np.float64)
    lut.flags.writeable = False
    return lut


class _Context:
    def __init__(self, problem: AssemblyProblem, params: AogParams, leaf_bonus, null_bonus):
        self.problem = problem
        self.params = params
        s = problem.structure
        self.s = s
        h, w = problem.shape
        self.hw = h * w
        self.n_words = (self.hw + 63) // 64
        self.lut = _byte_lut(h, w)
        self.diag = problem.diag
        self.leaf_bonus = leaf_bonus
        self.null_bonus = null_bonus
        self.side = self._side_matrices()
        self.truncated = False
        self._leaves: dict[int, _Table] = {}

    def _side_matrices(self) -> dict:
        """Side-way pair scores ``S[i1, i2] = w . code(i1, i2)`` for every (c, pair)."""
        out = {}
        s, prob, prm = self.s, self.problem, self.params
        for c in range(s.n_parts, s.n_vertices):
            for i, (p1, p2) in enumerate(s.pairs(c)):
                n1, n2 = len(prob.candidates[p1]), len(prob.candidates[p2])
                codes = prob.pair_codes.get((p1, p2))
                if codes is None or n1 == 0 or n2 == 0:
                    out[(c, i)] = np.zeros((n1, n2))
                    continue
                if prm.layout.shared_side:
                    out[(c, i)] = codes @ prm.side(c, i, 1, 1)
                else:
                    blk = prm.block("side", c, i)
                    z1 = np.array([cd.part_type for cd in prob.candidates[p1]]) - 1
                    z2 = np.array([cd.part_type for cd in prob.candidates[p2]]) - 1
                    out[(c, i)] = np.einsum("abk,abk->ab", codes, blk[z1[:, None], z2[None, :]])
        return out

    def pack(self, flat: np.ndarray) -> np.ndarray:
        pad = self.n_words * 64 - flat.shape[1]
        if pad:
            flat = np.concatenate([flat, np.zeros((flat.shape[0], pad), bool)], axis=1)
        return np.packbits(flat, axis=1, bitorder="little").view(np.uint64)

    def moments(self, bits: np.ndarray):
        """Area and summed column/row indices of packed masks."""
        return _moments(np.ascontiguousarray(bits).view(np.uint8), self.lut)

    def invisible_state(self) -> _Table:
        V, P = self.s.n_vertices, self.s.n_parts
        return _Table(
            np.zeros(1), np.zeros((1, V), np.int64), np.zeros((1, V), np.int64), np.full((1, P), -1, np.int64),
            np.zeros((1, self.n_words), np.uint64), np.zeros(1), np.zeros(1), np.zeros(1),
        )

    def leaf_table(self, p: int, k: int) -> _Table:
        if p not in self._leaves:
            self._leaves[p] = self._all_leaf_states(p)
        return _rank(self._leaves[p], k, self)

    def _all_leaf_states(self, p: int) -> _Table:
        cands = self.problem.candidates[p]
        n = len(cands)
        V, P = self.s.n_vertices, self.s.n_parts
        if n == 0:
            return self.invisible_state()
        prm = self.params
        z = np.array([c.part_type for c in cands], np.int64)
        g = np.array([c.score for c in cands])
        w = prm.block("w", p)[z - 1]
        b = prm.block("b", p)[z - 1]
        b0 = prm.bias(p, 0)
        score = b + w * g - b0
        if self.leaf_bonus is not None:
            score = score + self.leaf_bonus[p] - self.null_bonus[p]
        Z = np.zeros((n, V), np.int64)
        Z[:, p] = z
        Y = np.zeros((n, V), np.int64)
        Y[:, p] = self.problem.y_of[p]
        leaf = np.full((n, P), -1, np.int64)
        leaf[:, p] = np.arange(n)
        bits = self.pack(np.stack([c.segment.bits.ravel() for c in cands]))
        area, sx, sy = self.moments(bits)
        t = _Table(score, Z, Y, leaf, bits, area, sx, sy)
        return _Table.concat([t, self.invisible_state()])

    def composition_table(self, c: int, tables: dict[int, _Table], k: int) -> _Table:
        s, prm = self.s, self.params
        parts = [self.invisible_state()]
        b0 = prm.bias(c, 0)
        for z in range(1, s.n_states(c) + 1):
            kids = s.children(c, z)
            grids = np.indices([tables[mu].score.shape[0] for mu in kids]).reshape(len(kids), -1)
            sub = [tables[mu].take(grids[j]) for j, mu in enumerate(kids)]
            visible = np.zeros(grids.shape[1], bool)
            for j, mu in enumerate(kids):
                visible |= sub[j].Z[:, mu] != 0
            if not visible.any():
                continue
            sub = [t.take(visible) for t in sub]
            score = sum(t.score for t in sub) + prm.bias(c, z) - b0
            Z = sum(t.Z for t in sub)
            Y = sum(t.Y for t in sub)
            Z[:, c] = z
            Y[:, c] = 1
            leaf = sub[0].leaf.copy()
            for t in sub[1:]:
                leaf = np.maximum(leaf, t.leaf)
            bits = sub[0].bits.copy()
            for t in sub[1:]:
                bits |= t.bits
            area, sx, sy = self.moments(bits)
            # vertical geometry between the union and each visible child
            cx, cy = sx / area, sy / area
            for j, mu in enumerate(kids):
                t = sub[j]
                vis = t.Z[:, mu] != 0
                if not vis.any():
                    continue
                wv = prm.block("vert", c, z, mu)[np.maximum(t.Z[:, mu], 1) - 1]
                ta = np.where(vis, t.area, 1.0)
                dx = (t.sx / ta - cx) / self.diag
                dy = (t.sy / ta - cy) / self.diag
                ds = np.sqrt(t.area / area)
                geom = np.stack([dx, dx * dx, dy, dy * dy, ds, ds * ds], axis=1)
                score = score + np.where(vis, (wv * geom).sum(axis=1), 0.0)
            for i, (p1, p2) in enumerate(s.pairs(c)):
                i1, i2 = leaf[:, p1], leaf[:, p2]
                both = (i1 >= 0) & (i2 >= 0)
                if both.any():
                    S = self.side[(c, i)]
                    score = score + np.where(both, S[np.maximum(i1, 0), np.maximum(i2, 0)], 0.0)
            parts.append(_Table(score, Z, Y, leaf, bits, area, sx, sy))
        return _rank(_Table.concat(parts), k, self)


def _beam(ctx: _Context, k: int):
    s = ctx.s
    ctx.truncated = False
    tables: dict[int, _Table] = {p: ctx.leaf_table(p, k) for p in range(s.n_parts)}
    for c in s.bottom_up:
        tables[c] = ctx.composition_table(c, tables, k)
    best = tables[s.root_index].take(slice(0, 1))
    base = sum(ctx.params.bias(v, 0) for v in range(s.n_vertices))
    return ParseTree(best.Z[0], best.Y[0]), float(base + best.score[0]), ctx.truncated


def _search(problem, params, k, leaf_bonus=None, null_bonus=None, monotone=True):
    """Width-``k`` beam, or with ``monotone`` the best over widths ``1..k`` (monotone in ``k``)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ctx = _Context(problem, params, leaf_bonus, null_bonus)
    if not monotone:
        return _beam(ctx, k)[:2]
    best = None
    for kk in range(1, k + 1):
        tree, sc, truncated = _beam(ctx, kk)
        if best is None or sc > best[1] or (sc == best[1] and tree.key() < best[0].key()):
            best = (tree, sc)
        if not truncated:
            # nothing was pruned, so wider beams give the same result
            break
    return best


def infer(problem: AssemblyProblem, params: AogParams, k: int = DEFAULT_K, *, monotone: bool = True):
    """Best parse tree and its score ``W . Phi``.

    With ``monotone`` the best over all beam widths up to ``k`` is returned; otherwise a
    single width-``k`` pass. Both are exact once ``k`` covers every state list.
    """
    return _search(problem, params, k, monotone=monotone)


def _iou_bonus(problem: AssemblyProblem, sign: float):
    if problem.gt_iou is None:
        raise ValueError("problem has no ground truth")
    return [sign * a for a in problem.gt_iou], sign * problem.gt_null_iou


def oracle_parse(problem: AssemblyProblem, k: int = DEFAULT_K) -> ParseTree:
    """Tree maximizing the summed part IoU with the ground truth over the candidate lists."""
    zero = AogParams(ParamLayout(problem.structure, problem.n_pp))
    lb, nb = _iou_bonus(problem, 1.0)
    tree = _search(problem, zero, k, lb, nb, monotone=False)[0]
    check_tree(tree, problem)
    return tree


def loss_augmented_infer(
    problem: AssemblyProblem, params: AogParams, oracle: ParseTree, k: int = DEFAULT_K, *, monotone: bool = True
):
    """Tree maximizing ``W . Phi + Delta``; returns ``(tree, objective)``."""
    lb, nb = _iou_bonus(problem, -1.0)
    tree, sc = _search(problem, params, k, lb, nb, monotone=monotone)
    # beam scores are relative to "all invisible", so restore the null IoUs before adding delta(oracle)
    return tree, sc - float(problem.gt_null_iou.sum()) + delta(oracle, problem)
