"""Statistical-query abstraction and oracle implementations.

A statistical query is a bounded function of one labeled example; an oracle
answers with something close to its mean under the source. Three oracles
live here: the exact oracle (answers with the true mean), a perturbing
oracle exercising worst-case-but-valid answer policies, and an adversarial
oracle that hides the labels of weakly-correlated queries. A transcript
records every answered query with its interaction round so that
label-non-adaptivity is a checkable property of a run, not a promise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from ._rng import derive_seed, generator
from .core import LabeledSource
from .errors import BudgetExceeded, ContractViolation, PreconditionError, ProtocolError

RANGE_TOL = 1e-12
DEP_TOL = 1e-12

QueryFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StatQuery:
    """A [-1,1]-valued function of a labeled example, with a tolerance request.

    fn is batch-first: fn(X, y) maps an (n, d) array of points and an (n,)
    array of labels to n values. label_dependent declares whether fn reads
    y at all; the declaration is verified against the decomposition on
    every support the query is evaluated on. scale records the factor a
    consumer multiplies the answer by when the submitted function is a
    range-normalized stand-in for a larger quantity.
    """

    fn: QueryFn
    tau: float
    label_dependent: bool
    name: str = ""
    scale: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise PreconditionError("tolerance must be positive")


@dataclass(frozen=True)
class QueryDecomposition:
    """Split of a query into label-free and label-weighted parts.

    For every point and label, g(x) + y * h(x) reconstructs the query value.
    """

    g: Callable[[np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]


def decompose(q: StatQuery) -> QueryDecomposition:
    """g(x) = (fn(x,+1) + fn(x,-1)) / 2, h(x) = (fn(x,+1) - fn(x,-1)) / 2."""

    def g(X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        ones = np.ones(X.shape[0])
        return (np.asarray(q.fn(X, ones)) + np.asarray(q.fn(X, -ones))) / 2.0

    def h(X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        ones = np.ones(X.shape[0])
        return (np.asarray(q.fn(X, ones)) - np.asarray(q.fn(X, -ones))) / 2.0

    return QueryDecomposition(g=g, h=h)


@dataclass(frozen=True)
class TranscriptEntry:
    round: int
    label_dependent: bool
    tolerance: float
    answer: float
    scale: float = 1.0


class InteractivityTranscript:
    """Ordered record of answered queries; rounds must be nondecreasing."""

    def __init__(self):
        self.entries: list[TranscriptEntry] = []

    def append(self, entry: TranscriptEntry):
        if entry.round < 0:
            raise ProtocolError("round indices must be >= 0")
        if self.entries and entry.round < self.entries[-1].round:
            raise ProtocolError(
                f"round {entry.round} issued after round {self.entries[-1].round}"
            )
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def answers(self) -> list[float]:
        return [e.answer for e in self.entries]

    def rounds_used(self) -> int:
        return 0 if not self.entries else self.entries[-1].round + 1

    def to_jsonl(self) -> str:
        lines = []
        for e in self.entries:
            obj = {
                "round": e.round,
                "label_dep": e.label_dependent,
                "tau": e.tolerance,
                "answer": e.answer,
            }
            if e.scale != 1.0:
                obj["scale"] = e.scale
            lines.append(json.dumps(obj, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str) -> "InteractivityTranscript":
        t = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            t.append(
                TranscriptEntry(
                    round=int(obj["round"]),
                    label_dependent=bool(obj["label_dep"]),
                    tolerance=float(obj["tau"]),
                    answer=float(obj["answer"]),
                    scale=float(obj.get("scale", 1.0)),
                )
            )
        return t


def assert_label_non_adaptive(t: InteractivityTranscript) -> bool:
    """True iff every label-dependent entry was issued in round 0."""
    return all(e.round == 0 for e in t.entries if e.label_dependent)


def _evaluate_on_support(q: StatQuery, src: LabeledSource):
    """Evaluate fn under both labels, enforcing range and dependence contracts.

    Returns (plus, minus, realized) where realized[i] = fn(x_i, f(x_i)).
    """
    X = src.dist.matrix
    ones = np.ones(X.shape[0])
    plus = np.asarray(q.fn(X, ones), dtype=float)
    minus = np.asarray(q.fn(X, -ones), dtype=float)
    if plus.shape != ones.shape or minus.shape != ones.shape:
        raise ContractViolation("query fn returned a wrong-shaped batch")
    worst = max(float(np.max(np.abs(plus))), float(np.max(np.abs(minus))))
    if worst > 1.0 + RANGE_TOL:
        raise ContractViolation(f"query value {worst:.6g} outside [-1, 1]")
    # The flag covers the query's declared domain; the evaluated support can
    # only witness dependence, never rule it out, so the lazy check is
    # one-directional.
    actually_dependent = bool(np.max(np.abs(plus - minus)) > DEP_TOL)
    if actually_dependent and not q.label_dependent:
        raise ContractViolation(
            "declared label_dependent=False but support evaluation "
            "shows dependence"
        )
    realized = np.where(src.labels > 0, plus, minus)
    return plus, minus, realized


class _TranscriptingOracle:
    """Common answer bookkeeping for the concrete oracles."""

    def __init__(self):
        self.transcript = InteractivityTranscript()

    def ask(self, q: StatQuery, round_index: int) -> float:
        answer = self._answer(q)
        self.transcript.append(
            TranscriptEntry(
                round=int(round_index),
                label_dependent=q.label_dependent,
                tolerance=q.tau,
                answer=float(answer),
                scale=q.scale,
            )
        )
        return float(answer)

    def _answer(self, q: StatQuery) -> float:
        raise NotImplementedError


class ExactOracle(_TranscriptingOracle):
    """Answers every query with its exact mean under the source."""

    def __init__(self, src: LabeledSource):
        super().__init__()
        self.src = src

    def _answer(self, q: StatQuery) -> float:
        _, _, realized = _evaluate_on_support(q, self.src)
        return self.src.expectation(realized)


PERTURBATION_POLICIES = ("grid", "plus_tau", "minus_tau", "uniform")


class PerturbingOracle(_TranscriptingOracle):
    """Valid-but-unhelpful oracle: answers within tau of the mean, per policy.

    grid      snap the exact mean to the nearest multiple of tau
    plus_tau  exact mean plus tau
    minus_tau exact mean minus tau
    uniform   exact mean plus a seeded uniform draw from [-tau, tau]
    """

    def __init__(self, src: LabeledSource, policy: str, seed: int = 0):
        super().__init__()
        if policy not in PERTURBATION_POLICIES:
            raise PreconditionError(f"unknown policy {policy!r}")
        self.src = src
        self.policy = policy
        self._rng = generator(derive_seed(seed, "perturbing-oracle"))

    def _answer(self, q: StatQuery) -> float:
        _, _, realized = _evaluate_on_support(q, self.src)
        exact = self.src.expectation(realized)
        if self.policy == "grid":
            return float(np.floor(exact / q.tau + 0.5) * q.tau)
        if self.policy == "plus_tau":
            return exact + q.tau
        if self.policy == "minus_tau":
            return exact - q.tau
        return exact + float(self._rng.uniform(-q.tau, q.tau))


@dataclass(frozen=True)
class AdversarialOracleConfig:
    """Source plus a query budget m; the correlation threshold is 1/m."""

    src: LabeledSource
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise PreconditionError("query budget must be >= 1")


class AdversarialOracle(_TranscriptingOracle):
    """Answers label-blind whenever the query barely correlates with the target.

    Each query is split as g(x) + y*h(x). If the target-correlation
    |E[f(x) h(x)]| reaches the threshold 1/m the oracle concedes the exact
    mean; otherwise it answers E[g(x)], erasing the labels entirely. Every
    answer is within 1/m of the exact mean, so the oracle is a valid
    tolerance-1/m responder while revealing nothing about weakly-correlated
    directions. Negating the target changes no below-threshold answer.
    """

    def __init__(self, cfg: AdversarialOracleConfig):
        super().__init__()
        self.cfg = cfg
        self.queries_asked = 0
        self.branches: list[str] = []

    def _answer(self, q: StatQuery) -> float:
        if self.queries_asked >= self.cfg.m:
            raise BudgetExceeded(
                f"adversarial oracle budget of {self.cfg.m} queries exhausted"
            )
        self.queries_asked += 1
        src = self.cfg.src
        plus, minus, realized = _evaluate_on_support(q, src)
        h_vals = (plus - minus) / 2.0
        g_vals = (plus + minus) / 2.0
        correlation = src.expectation(src.labels * h_vals)
        threshold = 1.0 / self.cfg.m
        if abs(correlation) >= threshold:
            self.branches.append("exact")
            return src.expectation(realized)
        self.branches.append("label_blind")
        return src.expectation(g_vals)


class QueryDriver(Protocol):
    """Adaptive query protocol: rounds of queries fed by batched answers.

    max_queries bounds the total number of queries across all rounds and
    must be declared up front so simulators can size their sample budgets.
    """

    max_queries: int

    def begin(self) -> Sequence[StatQuery]: ...

    def feed(self, answers: Sequence[float]) -> Sequence[StatQuery] | None: ...

    def result(self) -> object: ...


AskFn = Callable[[StatQuery, int], float]


def run_driver(driver, ask: AskFn) -> int:
    """Run a driver to completion against an answer function; returns rounds."""
    queries = list(driver.begin())
    round_index = 0
    while queries:
        answers = [ask(q, round_index) for q in queries]
        round_index += 1
        nxt = driver.feed(answers)
        queries = list(nxt) if nxt is not None else []
    return round_index
