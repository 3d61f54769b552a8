"""Executor rollouts, metric tables and per-step curves."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import graphgen, vi
from .executor import GraphStructure, MpnnParams, executor_step
from .mdp import Mdp
from .seeds import derive_seed

ROLLOUT_TOL = 1e-4
MAX_STEPS = 200
TEST_COUNT = 100


class RolloutDivergence(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite value produced at rollout step {step}")
        self.step = step


@dataclass
class RolloutResult:
    values: np.ndarray
    steps: int
    converged: bool
    mse: list[float]
    accuracy: list[float]


StepFn = Callable[[Mdp, np.ndarray], np.ndarray]


def oracle_step(mdp: Mdp, v: np.ndarray) -> np.ndarray:
    """Drop-in replacement for the executor, used to self-test the harness."""
    return vi.vi_step(mdp, v)


def rollout(
    params: MpnnParams | None,
    mdp: Mdp,
    v_star: np.ndarray | None = None,
    tolerance: float = ROLLOUT_TOL,
    max_steps: int = MAX_STEPS,
    step_fn: StepFn | None = None,
) -> RolloutResult:
    """Feed the executor its own predictions from ``v = 0`` until they settle."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if v_star is None:
        v_star = vi.solve(mdp).final
    if step_fn is None:
        structure = GraphStructure(mdp)

        def step_fn(m, v):
            return executor_step(m, v, params, structure)

    v = np.zeros(mdp.num_states)
    mse: list[float] = []
    acc: list[float] = []
    converged = False
    for t in range(1, max_steps + 1):
        nv = step_fn(mdp, v)
        if not np.all(np.isfinite(nv)):
            raise RolloutDivergence(t)
        mse.append(vi.value_mse(nv, v_star))
        acc.append(vi.policy_accuracy(mdp, nv, v_star))
        delta = float(np.max(np.abs(nv - v)))
        v = nv
        if delta < tolerance:
            converged = True
            break
    return RolloutResult(v, len(mse), converged, mse, acc)


def per_step_curves(results: Sequence[RolloutResult]) -> list[tuple[int, float, float]]:
    """Pointwise mean ``(step, mse, accuracy)``; short rollouts are padded with their last value."""
    if not results:
        raise ValueError("per_step_curves needs at least one rollout")
    length = max(r.steps for r in results)

    def pad(xs):
        return xs + [xs[-1]] * (length - len(xs))

    mse = np.mean([pad(r.mse) for r in results], axis=0)
    acc = np.mean([pad(r.accuracy) for r in results], axis=0)
    return [(t + 1, float(m), float(a)) for t, (m, a) in enumerate(zip(mse, acc))]


@dataclass(frozen=True)
class SuiteEntry:
    spec: graphgen.GenSpec
    count: int = TEST_COUNT

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "count": self.count}

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteEntry":
        unknown = set(d) - {"spec", "count"}
        if unknown:
            raise ValueError(f"unknown suite entry keys: {sorted(unknown)}")
        return cls(graphgen.GenSpec.from_dict(d["spec"]), int(d.get("count", TEST_COUNT)))


@dataclass
class MetricsRow:
    family: str
    num_states: int
    num_actions: int
    variant: str
    mse: float
    accuracy_percent: float
    count: int
    seed_lo: int
    seed_hi: int
    converged_fraction: float = float("nan")
    error: str = ""
    curve: list = field(default_factory=list, repr=False)


CSV_FIELDS = [
    "family",
    "num_states",
    "num_actions",
    "variant",
    "mse",
    "accuracy_percent",
    "count",
    "seed_lo",
    "seed_hi",
]


@dataclass
class MetricsTable:
    rows: list[MetricsRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def extend(self, other: "MetricsTable") -> None:
        self.rows.extend(other.rows)

    def lookup(self, family: str, num_states: int, variant: str | None = None) -> MetricsRow | None:
        for r in self.rows:
            if r.family == family and r.num_states == num_states and variant in (None, r.variant):
                return r
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow([
                r.family, r.num_states, r.num_actions, r.variant,
                repr(r.mse), repr(r.accuracy_percent), r.count, r.seed_lo, r.seed_hi,
            ])
        return buf.getvalue()

    def to_text(self, by: str = "family") -> str:
        """Grid with one line per family (or variant) and one MSE/accuracy column pair per |S|.

        A row whose action count differs from its column's (the maze) gets it
        appended to the value, e.g. ``69.86 (A=8)``.
        """
        col_actions: dict[int, int] = {}
        for r in self.rows:
            col_actions.setdefault(r.num_states, r.num_actions)
        sizes = sorted(col_actions)
        keys: list[str] = []
        for r in self.rows:
            k = getattr(r, by)
            if k not in keys:
                keys.append(k)
        width = 16
        head = f"{'':<18}" + "".join(f"{f'MSE {s}/{col_actions[s]}':>{width}}" for s in sizes)
        head += "".join(f"{f'Acc {s}/{col_actions[s]}':>{width}}" for s in sizes)
        lines = [head, "-" * len(head)]
        for k in keys:
            cells = {r.num_states: r for r in self.rows if getattr(r, by) == k}

            def fmt(size, attr):
                r = cells.get(size)
                if r is None:
                    return f"{'':>{width}}"
                if r.error:
                    return f"{'missing' if r.count == 0 else 'error':>{width}}"
                text = f"{getattr(r, attr):.4g}"
                if r.num_actions != col_actions[size]:
                    text += f" (A={r.num_actions})"
                return f"{text:>{width}}"

            lines.append(
                f"{k:<18}"
                + "".join(fmt(sz, "mse") for sz in sizes)
                + "".join(fmt(sz, "accuracy_percent") for sz in sizes)
            )
        return "\n".join(lines) + "\n"


def make_test_mdp(spec: graphgen.GenSpec, seed: int, index: int) -> Mdp:
    return graphgen.generate(spec, np.random.default_rng(derive_seed(seed, "test", index, spec.tag)))


def _evaluate_one(args) -> RolloutResult:
    params, spec, seed, index, tolerance, max_steps, step_fn = args
    mdp = make_test_mdp(spec, seed, index)
    return rollout(params, mdp, None, tolerance, max_steps, step_fn)


def evaluate_suite(
    params: MpnnParams | None,
    suite: Sequence[SuiteEntry],
    tolerance: float = ROLLOUT_TOL,
    max_steps: int = MAX_STEPS,
    seed: int = 0,
    step_fn: StepFn | None = None,
    workers: int = 1,
    variant: str | None = None,
) -> MetricsTable:
    """Roll out ``count`` fresh test MDPs per entry and aggregate final MSE / accuracy.

    Failures (generation or divergence) are recorded in the row's ``error``
    field and do not stop other rows.
    """
    if variant is None:
        variant = "oracle" if step_fn is not None else params.config.variant
    table = MetricsTable()
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for entry in suite:
            spec = entry.spec
            jobs = [(params, spec, seed, i, tolerance, max_steps, step_fn) for i in range(entry.count)]
            row = MetricsRow(
                spec.family, spec.num_states, spec.num_actions, variant,
                float("nan"), float("nan"), entry.count, 0, entry.count - 1,
            )
            try:
                if pool is None:
                    results = [_evaluate_one(j) for j in jobs]
                else:
                    results = list(pool.map(_evaluate_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
            except (RolloutDivergence, graphgen.GenerationError, ValueError) as exc:
                row.error = str(exc)
            else:
                row.mse = float(np.mean([r.mse[-1] for r in results]))
                row.accuracy_percent = 100.0 * float(np.mean([r.accuracy[-1] for r in results]))
                row.converged_fraction = float(np.mean([r.converged for r in results]))
                row.curve = per_step_curves(results)
            table.rows.append(row)
    finally:
        if pool is not None:
            pool.shutdown()
    return table


def curves_csv(curve: Sequence[tuple[int, float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "mse", "accuracy"])
    for step, m, a in curve:
        w.writerow([step, repr(m), repr(a)])
    return buf.getvalue()
