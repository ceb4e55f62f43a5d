"""Per-part linear support vector regression on segment features and top-n candidate selection."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .core import InvalidInputError, PoseJoints, SegmentMask
from .features import Dictionary, assign_type, pbg

log = logging.getLogger(__name__)

MODEL_VERSION = 1


@dataclass
class SvrConfig:
    C: float = 100.0
    epsilon: float = 0.05
    tol: float = 1e-4
    max_epochs: int = 2000


@numba.njit(cache=True)
def _svr_dual_cd(X, t, upper, eps, tol, max_epochs):
    # dual of 0.5|b|^2 + sum_i u_i max(0, |b.x_i - t_i| - eps), with box |alpha_i| <= u_i
    n, d = X.shape
    alpha = np.zeros(n)
    beta = np.zeros(d)
    q = np.empty(n)
    for i in range(n):
        q[i] = X[i] @ X[i]
    gap = np.inf
    epochs = 0
    for ep in range(max_epochs):
        epochs = ep + 1
        for i in range(n):
            if q[i] <= 0.0:
                continue
            g = beta @ X[i] - t[i]
            b = g - q[i] * alpha[i]
            if -(b + eps) > 0.0:
                a = -(b + eps) / q[i]
            elif -(b - eps) < 0.0:
                a = -(b - eps) / q[i]
            else:
                a = 0.0
            if a > upper[i]:
                a = upper[i]
            elif a < -upper[i]:
                a = -upper[i]
            da = a - alpha[i]
            if da != 0.0:
                alpha[i] = a
                beta += da * X[i]
        # duality gap, relative to the primal value
        reg = 0.5 * (beta @ beta)
        loss = 0.0
        lin = 0.0
        l1 = 0.0
        for i in range(n):
            r = abs(beta @ X[i] - t[i]) - eps
            if r > 0.0:
                loss += upper[i] * r
            lin += t[i] * alpha[i]
            l1 += abs(alpha[i])
        primal = reg + loss
        dual = -reg + lin - eps * l1
        gap = (primal - dual) / max(1.0, abs(primal))
        if gap < tol:
            break
    return beta, gap, epochs


def train_svr(features, targets, C: float = 100.0, epsilon: float = 0.05, tol: float = 1e-4, max_epochs: int = 2000):
    """Linear SVR without bias, ``min 0.5|beta|^2 + (C/n) sum max(0, |beta.phi - t| - eps)``.

    Dual coordinate descent in fixed example order. Returns ``(beta, info)``.
    """
    X = np.ascontiguousarray(features, dtype=np.float64)
    t = np.ascontiguousarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[0] != t.shape[0]:
        raise InvalidInputError("need at least 2 aligned (feature, target) examples")
    if t.min() < 0.0 or t.max() > 1.0:
        raise InvalidInputError("targets must lie in [0, 1]")
    n = X.shape[0]
    upper = np.full(n, C / n)
    beta, gap, epochs = _svr_dual_cd(X, t, upper, float(epsilon), float(tol), int(max_epochs))
    degenerate = bool(np.all(X == X[0]))
    if degenerate:
        log.warning("all training features are identical; the regressor cannot fit the targets")
    return beta, {"gap": float(gap), "epochs": int(epochs), "degenerate": degenerate}


def score(beta: np.ndarray, feature: np.ndarray) -> float:
    beta = np.asarray(beta)
    feature = np.asarray(feature)
    if beta.shape != feature.shape:
        raise InvalidInputError(f"dimension mismatch {beta.shape} vs {feature.shape}")
    return float(beta @ feature)


@dataclass
class SvrModel:
    weights: dict[str, np.ndarray]  # part name -> beta
    config: SvrConfig = field(default_factory=SvrConfig)
    layout: dict | None = None

    def save(self, path: str | Path) -> None:
        doc = {
            "version": MODEL_VERSION,
            "config": self.config.__dict__,
            "layout": self.layout,
            "weights": {k: v.tolist() for k, v in self.weights.items()},
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path: str | Path) -> "SvrModel":
        doc = json.loads(Path(path).read_text())
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported ranker model version {doc.get('version')}")
        return cls(
            {k: np.array(v) for k, v in doc["weights"].items()},
            SvrConfig(**doc["config"]),
            doc.get("layout"),
        )


@dataclass
class Candidate:
    """A selected segment for one part: its ranker score and assigned type."""

    pool_index: int
    segment: SegmentMask
    score: float
    part_type: int
    pbg: np.ndarray


@dataclass
class SelectedPool:
    """Per part, the top-n candidates sorted by descending score; ``by_type`` views follow."""

    parts: tuple[str, ...]
    candidates: dict[str, list[Candidate]]
    truncated: bool = False

    def by_type(self, part: str, z: int) -> list[Candidate]:
        return [c for c in self.candidates[part] if c.part_type == z]

    def y_index(self, part: str, cand: Candidate) -> int:
        """1-based position of ``cand`` in its (part, type) list."""
        return self.by_type(part, cand.part_type).index(cand) + 1

    @property
    def store(self) -> dict[int, SegmentMask]:
        out = {}
        for lst in self.candidates.values():
            for c in lst:
                out[c.pool_index] = c.segment
        return out

    def to_dict(self) -> dict:
        return {
            "parts": list(self.parts),
            "truncated": self.truncated,
            "candidates": {
                p: [{"pool_index": c.pool_index, "score": c.score, "type": c.part_type} for c in lst]
                for p, lst in self.candidates.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict, segments: list[SegmentMask], joints: PoseJoints) -> "SelectedPool":
        cache: dict[int, np.ndarray] = {}

        def feat(i):
            if i not in cache:
                cache[i] = pbg(segments[i], joints)
            return cache[i]

        cands = {
            p: [Candidate(int(c["pool_index"]), segments[int(c["pool_index"])], float(c["score"]), int(c["type"]), feat(int(c["pool_index"]))) for c in lst]
            for p, lst in d["candidates"].items()
        }
        return cls(tuple(d["parts"]), cands, bool(d.get("truncated", False)))


def top_indices(scores: np.ndarray, n: int) -> np.ndarray:
    """Indices of the ``n`` largest scores, descending; ties keep the lower index first."""
    order = np.lexsort((np.arange(scores.size), -np.asarray(scores)))
    return order[:n]


def select_top(
    segments: list[SegmentMask],
    features: np.ndarray,
    model: SvrModel,
    joints: PoseJoints,
    part_dicts: dict[str, Dictionary],
    n_p: int = 10,
    parts: tuple[str, ...] | None = None,
    pbg_cache: dict[int, np.ndarray] | None = None,
) -> SelectedPool:
    """Score every pool segment per part and keep the top ``n_p``, each tagged with its type."""
    if not segments:
        raise InvalidInputError("cannot select from an empty pool")
    parts = parts or tuple(model.weights)
    truncated = len(segments) < n_p
    if truncated:
        log.warning("pool has %d segments, fewer than n_p=%d", len(segments), n_p)
    pbg_cache = {} if pbg_cache is None else pbg_cache
    out: dict[str, list[Candidate]] = {}
    for part in parts:
        s = features @ model.weights[part]
        cands = []
        for i in top_indices(s, n_p):
            i = int(i)
            if i not in pbg_cache:
                pbg_cache[i] = pbg(segments[i], joints)
            z = assign_type(pbg_cache[i], part_dicts[part])
            cands.append(Candidate(i, segments[i], float(s[i]), z, pbg_cache[i]))
        out[part] = cands
    return SelectedPool(parts, out, truncated)
