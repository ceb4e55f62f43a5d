"""Structural max-margin learning of AOG weights by n-slack cutting planes.

Primal: ``min 0.5 |W|^2 + C sum_n xi_n`` subject to
``W . (Phi*_n - Phi(hyp)) >= Delta_n(hyp) - xi_n`` for every hypothesis in the working set.
The working-set dual (box ``alpha >= 0``, ``sum_{i in n} alpha_i <= C`` per example) is
solved by warm-started coordinate ascent with pairwise moves inside saturated examples,
so its value never decreases between re-solves.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .inference import DEFAULT_K, loss_augmented_infer
from .model import AogParams, AssemblyProblem, ParamLayout, ParseTree, delta, feature_vector

log = logging.getLogger(__name__)


class DegenerateDataError(ValueError):
    """No training example has a visible part, so there is nothing to learn."""


@dataclass
class TrainingExample:
    problem: AssemblyProblem
    oracle: ParseTree
    phi_star: np.ndarray = None
    delta_star: float = None

    def prepare(self, layout: ParamLayout) -> None:
        if self.phi_star is None:
            self.phi_star = feature_vector(self.oracle, self.problem, layout).to_dense()
        if self.delta_star is None:
            self.delta_star = delta(self.oracle, self.problem)


@dataclass
class TrainInfo:
    trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    n_constraints: int = 0
    violations: list[float] = field(default_factory=list)
    slacks: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@numba.njit(cache=True)
def _dual_ascent(Psi, dlt, ptr, idx, C, alpha, w, tol, max_sweeps):
    m = Psi.shape[0]
    q = np.empty(m)
    for i in range(m):
        q[i] = Psi[i] @ Psi[i]
    dual = dlt @ alpha - 0.5 * (w @ w)
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        for g in range(ptr.shape[0] - 1):
            lo, hi = ptr[g], ptr[g + 1]
            for a in range(lo, hi):
                i = idx[a]
                total = 0.0
                for b in range(lo, hi):
                    total += alpha[idx[b]]
                room = C - (total - alpha[i])
                grad = dlt[i] - w @ Psi[i]
                if q[i] > 0.0:
                    new = alpha[i] + grad / q[i]
                elif grad > 0.0:
                    new = room
                else:
                    new = alpha[i]
                new = min(max(new, 0.0), room)
                d = new - alpha[i]
                if d != 0.0:
                    alpha[i] = new
                    w += d * Psi[i]
            if hi - lo > 1:
                # move mass from the worst active constraint to the best one
                bi = -1
                bj = -1
                gi = -np.inf
                gj = np.inf
                for a in range(lo, hi):
                    i = idx[a]
                    gr = dlt[i] - w @ Psi[i]
                    if gr > gi:
                        gi = gr
                        bi = i
                    if alpha[i] > 0.0 and gr < gj:
                        gj = gr
                        bj = i
                if bj >= 0 and bi != bj and gi - gj > 1e-12:
                    diff = Psi[bi] - Psi[bj]
                    qq = diff @ diff
                    t = alpha[bj] if qq <= 0.0 else min((gi - gj) / qq, alpha[bj])
                    alpha[bi] += t
                    alpha[bj] -= t
                    w += t * diff
        new_dual = dlt @ alpha - 0.5 * (w @ w)
        gain = new_dual - dual
        dual = new_dual
        if gain <= tol * max(1.0, abs(dual)):
            break
    return dual, sweeps


def solve_working_set(psis, deltas, groups, C, alpha0=None, tol=1e-6, max_sweeps=100000):
    """Maximize ``sum alpha Delta - 0.5 |sum alpha psi|^2`` over the per-example simplices.

    Returns ``(alpha, W, dual)``. ``alpha0`` warm-starts the solver (it must be feasible).
    """
    Psi = np.ascontiguousarray(psis, dtype=np.float64)
    dlt = np.ascontiguousarray(deltas, dtype=np.float64)
    groups = np.asarray(groups, dtype=np.int64)
    alpha = np.zeros(len(dlt)) if alpha0 is None else np.array(alpha0, dtype=np.float64)
    order = np.argsort(groups, kind="stable")
    counts = np.bincount(groups, minlength=groups.max() + 1 if groups.size else 0)
    ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    w = Psi.T @ alpha
    dual, _ = _dual_ascent(Psi, dlt, ptr, order.astype(np.int64), float(C), alpha, w, float(tol), int(max_sweeps))
    return alpha, w, float(dual)


def train_structural(
    examples: list[TrainingExample],
    layout: ParamLayout,
    C: float = 1.0,
    max_iters: int = 50,
    k: int = DEFAULT_K,
    tol: float = 1e-3,
    jobs: int = 1,
    init: AogParams | None = None,
) -> tuple[AogParams, TrainInfo]:
    """Cutting-plane training; returns the learned parameters and the dual objective trace."""
    if not examples:
        raise DegenerateDataError("no training examples")
    for ex in examples:
        ex.prepare(layout)
    if all(not np.any(ex.oracle.z[: layout.structure.n_parts]) for ex in examples):
        raise DegenerateDataError("no training example has a visible part")
    params = init if init is not None else AogParams(layout)
    info = TrainInfo()
    psis: list[np.ndarray] = []
    deltas: list[float] = []
    groups: list[int] = []
    alpha = np.zeros(0)

    def most_violated(n: int):
        ex = examples[n]
        hyp, _ = loss_augmented_infer(ex.problem, params, ex.oracle, k)
        psi = ex.phi_star - feature_vector(hyp, ex.problem, layout).to_dense()
        return psi, ex.delta_star - delta(hyp, ex.problem)

    pool = ThreadPoolExecutor(jobs) if jobs > 1 else None
    try:
        for it in range(max_iters):
            info.iterations = it + 1
            found = list(pool.map(most_violated, range(len(examples)))) if pool else [most_violated(n) for n in range(len(examples))]
            W = params.W
            slack = np.zeros(len(examples))
            for i, (psi, d) in enumerate(zip(psis, deltas)):
                slack[groups[i]] = max(slack[groups[i]], d - W @ psi)
            added = 0
            info.violations, info.slacks = [], slack.tolist()
            for n, (psi, d) in enumerate(found):
                viol = d - W @ psi
                info.violations.append(float(viol))
                if viol > slack[n] + tol:
                    psis.append(psi)
                    deltas.append(d)
                    groups.append(n)
                    added += 1
            log.info("iteration %d: %d constraints added", it + 1, added)
            if added == 0:
                info.converged = True
                break
            alpha = np.concatenate([alpha, np.zeros(added)])
            alpha, W, dual = solve_working_set(np.stack(psis), deltas, groups, C, alpha)
            params = AogParams(layout, W)
            info.trace.append(dual)
    finally:
        if pool:
            pool.shutdown()
    info.n_constraints = len(psis)
    return params, info
