"""Domain types and exact computations over finite labeled sources.

Everything downstream (oracles, compilers, learners, the lower-bound lab)
works against the types defined here: points in the unit ball, explicit
finite distributions, target function classes closed under negation, labeled
sources supporting exact expectations, and seeded sampling. Distributions
are explicit finite lists on purpose: oracle-equality and lower-bound
demonstrations need exact means, not estimates.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from ._rng import derive_seed, generator
from .errors import EvaluationError, PreconditionError

logger = logging.getLogger(__name__)

BALL_TOL = 1e-9
PROB_TOL = 1e-12


def signp(a: np.ndarray | float) -> np.ndarray:
    """Sign function with the convention sign(0) = +1."""
    return np.where(np.asarray(a, dtype=float) >= 0.0, 1.0, -1.0)


@dataclass(frozen=True, eq=False)
class Point:
    """A point in the Euclidean unit ball.

    Coordinates whose norm exceeds 1 by more than 1e-9 are rescaled onto
    the sphere with a logged warning rather than rejected.
    """

    coords: np.ndarray

    def __post_init__(self):
        arr = np.array(self.coords, dtype=float).reshape(-1)
        norm = float(np.linalg.norm(arr))
        if norm > 1.0 + BALL_TOL:
            logger.warning("point norm %.6g > 1; rescaling onto the unit sphere", norm)
            arr = arr / norm
        arr.setflags(write=False)
        object.__setattr__(self, "coords", arr)

    @property
    def dim(self) -> int:
        return self.coords.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Point):
            return NotImplemented
        return self.coords.shape == other.coords.shape and bool(
            np.all(self.coords == other.coords)
        )

    def __hash__(self) -> int:
        return hash(self.coords.tobytes())

    def __repr__(self) -> str:
        return f"Point({np.array2string(self.coords, separator=', ')})"


class FiniteDistribution:
    """Explicit distribution over finitely many distinct points."""

    def __init__(self, support: Sequence[Point], probs: Iterable[float]):
        support = tuple(
            p if isinstance(p, Point) else Point(np.asarray(p)) for p in support
        )
        probs_arr = np.array(list(probs), dtype=float)
        if len(support) == 0:
            raise PreconditionError("empty support")
        if probs_arr.shape != (len(support),):
            raise PreconditionError("probs length does not match support")
        if np.any(probs_arr < 0):
            raise PreconditionError("negative probability")
        if abs(float(probs_arr.sum()) - 1.0) > PROB_TOL:
            raise PreconditionError(
                f"probabilities sum to {probs_arr.sum()!r}, not 1 within {PROB_TOL}"
            )
        if len({hash(p) for p in support}) != len(support) or len(set(support)) != len(
            support
        ):
            raise PreconditionError("support entries must be distinct")
        dims = {p.dim for p in support}
        if len(dims) != 1:
            raise PreconditionError("support points have mixed dimensions")
        probs_arr.setflags(write=False)
        matrix = np.vstack([p.coords for p in support])
        matrix.setflags(write=False)
        self.support = support
        self.probs = probs_arr
        self._matrix = matrix

    @property
    def matrix(self) -> np.ndarray:
        """Support points stacked as an (n, d) array."""
        return self._matrix

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    def __len__(self) -> int:
        return len(self.support)

    def expectation(self, values: np.ndarray) -> float:
        """Exact mean of per-support-point values."""
        values = np.asarray(values, dtype=float)
        if values.shape != self.probs.shape:
            raise PreconditionError("values length does not match support")
        return float(self.probs @ values)


class TargetFunction:
    """A {-1,+1}-valued function on points, evaluable in bulk."""

    def labels_for(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def negate(self) -> "TargetFunction":
        raise NotImplementedError

    def __call__(self, point: Point) -> int:
        return int(self.labels_for(point.coords[None, :])[0])

    def to_json(self) -> dict:
        raise NotImplementedError


class LinearThreshold(TargetFunction):
    """x -> sign(<w, x>) with a declared margin gamma.

    The margin is a promise about the support the function is paired with;
    it is enforced when a LabeledSource is assembled.
    """

    def __init__(self, w: np.ndarray, gamma: float):
        w = np.array(w, dtype=float).reshape(-1)
        norm = float(np.linalg.norm(w))
        if norm > 1.0 + BALL_TOL:
            logger.warning("threshold weights norm %.6g > 1; rescaling", norm)
            w = w / norm
        if not 0.0 < gamma <= 1.0:
            raise PreconditionError("gamma must lie in (0, 1]")
        w.setflags(write=False)
        self.w = w
        self.gamma = float(gamma)

    def labels_for(self, X: np.ndarray) -> np.ndarray:
        return signp(np.asarray(X, dtype=float) @ self.w)

    def negate(self) -> "LinearThreshold":
        return LinearThreshold(-self.w, self.gamma)

    def to_json(self) -> dict:
        return {
            "kind": "linear_threshold",
            "w": [float(v) for v in self.w],
            "gamma": self.gamma,
        }


class DecisionList(TargetFunction):
    """Ordered single-variable rules over bits recovered from coordinates.

    Items are (variable index, polarity, output): the rule fires on x when
    bit_i(x) == polarity, where bit_i(x) = 1 iff coordinate i is positive
    (matching embed_hypercube). The first firing rule decides; otherwise
    the default label applies.
    """

    def __init__(self, items: Sequence[tuple[int, int, int]], default: int):
        items = tuple((int(i), int(p), int(b)) for i, p, b in items)
        for i, p, b in items:
            if i < 0:
                raise PreconditionError("literal index must be nonnegative")
            if p not in (0, 1):
                raise PreconditionError("polarity must be 0 or 1")
            if b not in (-1, 1):
                raise PreconditionError("output label must be -1 or +1")
        if int(default) not in (-1, 1):
            raise PreconditionError("default label must be -1 or +1")
        self.items = items
        self.default = int(default)

    def labels_for(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        d = X.shape[1]
        for i, _, _ in self.items:
            if i >= d:
                raise EvaluationError(f"literal index {i} out of range for dim {d}")
        bits = X > 0.0
        out = np.full(X.shape[0], float(self.default))
        undecided = np.ones(X.shape[0], dtype=bool)
        for i, p, b in self.items:
            fire = undecided & (bits[:, i] == bool(p))
            out[fire] = float(b)
            undecided &= ~fire
        return out

    def negate(self) -> "DecisionList":
        flipped = tuple((i, p, -b) for i, p, b in self.items)
        return DecisionList(flipped, -self.default)

    def to_json(self) -> dict:
        return {
            "kind": "decision_list",
            "items": [[i, p, b] for i, p, b in self.items],
            "default": self.default,
        }


class Explicit(TargetFunction):
    """A lookup-table function defined on an explicit set of points."""

    def __init__(self, table: dict[Point, int]):
        self._table = {}
        for point, label in table.items():
            if not isinstance(point, Point):
                point = Point(np.asarray(point))
            label = int(label)
            if label not in (-1, 1):
                raise PreconditionError("labels must be -1 or +1")
            self._table[point.coords.tobytes()] = label
        if not self._table:
            raise PreconditionError("empty table")

    @classmethod
    def from_support(cls, support: Sequence[Point], labels: Iterable[int]) -> "Explicit":
        return cls(dict(zip(support, labels)))

    def labels_for(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[0])
        for row in range(X.shape[0]):
            key = np.ascontiguousarray(X[row]).tobytes()
            if key not in self._table:
                raise EvaluationError("function undefined on a queried point")
            out[row] = float(self._table[key])
        return out

    def negate(self) -> "Explicit":
        flipped = Explicit.__new__(Explicit)
        flipped._table = {k: -v for k, v in self._table.items()}
        return flipped

    def to_json(self) -> dict:
        # Meaningful only alongside the support ordering; handled by the
        # source serializer.
        raise NotImplementedError("serialize via source_to_json")


def negate(f: TargetFunction) -> TargetFunction:
    """The pointwise negation of a target function (stays in its class)."""
    return f.negate()


class LabeledSource:
    """A finite distribution paired with a target labeling every support point."""

    def __init__(self, dist: FiniteDistribution, target: TargetFunction):
        labels = np.asarray(target.labels_for(dist.matrix), dtype=float)
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise PreconditionError("target produced a non-sign label")
        if isinstance(target, LinearThreshold):
            margins = labels * (dist.matrix @ target.w)
            worst = float(margins.min())
            if worst + 1e-12 < target.gamma:
                raise PreconditionError(
                    f"declared margin {target.gamma} violated on support "
                    f"(worst {worst:.6g})"
                )
        labels.setflags(write=False)
        self.dist = dist
        self.target = target
        self.labels = labels

    @property
    def dim(self) -> int:
        return self.dist.dim

    def expectation(self, values: np.ndarray) -> float:
        return self.dist.expectation(values)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Materialized i.i.d. examples (points as rows of X, labels in y)."""

    X: np.ndarray
    y: np.ndarray
    seed: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise PreconditionError("X must be (n, d) with matching labels")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def examples(self) -> list[tuple[Point, int]]:
        return [(Point(self.X[i]), int(self.y[i])) for i in range(len(self))]

    def batch(self, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
        return self.X[start:stop], self.y[start:stop]


class SampleStream:
    """Lazy view of n i.i.d. draws from a labeled source.

    Batch [start, stop) is a pure function of (source, seed, start), so a
    protocol consuming disjoint contiguous batches is deterministic
    regardless of evaluation order, and nothing is materialized up front.
    A batch is realized as multinomial counts over the finite support; the
    within-batch example order carries no information for the mean
    estimators that consume these batches.
    """

    def __init__(self, source: LabeledSource, n: int, seed: int):
        if n < 1:
            raise PreconditionError("stream size must be >= 1")
        self.source = source
        self.n = int(n)
        self.seed = int(seed)

    def __len__(self) -> int:
        return self.n

    def counts(self, start: int, stop: int) -> np.ndarray:
        """Multinomial support counts for the batch [start, stop)."""
        self._check_range(start, stop)
        rng = generator(derive_seed(self.seed, "stream-batch", start))
        return rng.multinomial(stop - start, self.source.dist.probs)

    def batch(self, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
        counts = self.counts(start, stop)
        X = np.repeat(self.source.dist.matrix, counts, axis=0)
        y = np.repeat(self.source.labels, counts)
        return X, y

    def _check_range(self, start: int, stop: int):
        if not 0 <= start < stop <= self.n:
            raise PreconditionError("batch range outside the declared stream size")


def counts_view(S, start: int, stop: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch [start, stop) of S as (rows, labels, multiplicities).

    For a SampleStream the rows are the support points with multinomial
    counts; for a Dataset every selected row appears with multiplicity 1.
    Downstream per-sample randomization treats a row with count k as k
    independent clients holding identical examples, which is exactly the
    distribution of materializing the draws individually.
    """
    if isinstance(S, SampleStream):
        counts = S.counts(start, stop)
        return S.source.dist.matrix, S.source.labels, counts
    X, y = S.batch(start, stop)
    return X, y, np.ones(X.shape[0], dtype=np.int64)


def classification_error(h, src: LabeledSource) -> float:
    """Exact disagreement mass between hypothesis h and the source target.

    h may be a TargetFunction or any callable taking a Point to a label.
    """
    if isinstance(h, TargetFunction):
        predicted = np.asarray(h.labels_for(src.dist.matrix), dtype=float)
    elif hasattr(h, "labels_for"):
        predicted = np.asarray(h.labels_for(src.dist.matrix), dtype=float)
    elif callable(h):
        predicted = np.array([float(h(p)) for p in src.dist.support])
    else:
        raise EvaluationError("hypothesis is neither a target function nor callable")
    return float(np.sum(src.dist.probs * (predicted != src.labels)))


def exact_margin(w: np.ndarray, src: LabeledSource) -> float:
    """min over support of f(x) * <w, x>."""
    w = np.asarray(w, dtype=float).reshape(-1)
    if float(np.linalg.norm(w)) > 1.0 + BALL_TOL:
        raise PreconditionError("w must lie in the unit ball")
    if w.shape[0] != src.dim:
        raise PreconditionError("dimension mismatch")
    margins = src.labels * (src.dist.matrix @ w)
    return float(margins.min())


def sample(src: LabeledSource, n: int, seed: int) -> Dataset:
    """n i.i.d. draws from the source; deterministic for a fixed seed."""
    if n < 1:
        raise PreconditionError("n must be >= 1")
    rng = generator(derive_seed(seed, "core-sample"))
    idx = rng.choice(len(src.dist), size=n, p=src.dist.probs)
    return Dataset(src.dist.matrix[idx], src.labels[idx], seed)


def embed_hypercube(bits: Sequence[int]) -> Point:
    """Map a bit vector to the unit sphere: b_i -> (2 b_i - 1) / sqrt(d)."""
    bits_arr = np.asarray(bits, dtype=float).reshape(-1)
    d = bits_arr.shape[0]
    if d < 1:
        raise PreconditionError("need at least one bit")
    if not np.all(np.isin(bits_arr, (0.0, 1.0))):
        raise PreconditionError("bits must be 0/1")
    return Point((2.0 * bits_arr - 1.0) / np.sqrt(d))


# ---------------------------------------------------------------------------
# Synthetic source builders used by experiments and tests.


def make_margin_source(
    d: int,
    gamma: float,
    n_support: int,
    seed: int,
    probs: str = "uniform",
) -> LabeledSource:
    """Random source that is linearly separable with margin exactly >= gamma.

    Each support point is u * w + r * v with v a unit vector orthogonal to
    the random unit normal w, |u| drawn from [gamma, u_max] and r bounded so
    the point stays in the unit ball. Labels are sign(u), so the declared
    margin holds by construction.
    """
    if not 0 < gamma < 1:
        raise PreconditionError("gamma must lie in (0, 1)")
    rng = generator(derive_seed(seed, "margin-source"))
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    u_max = min(1.0, 2.5 * gamma)
    signs = np.where(rng.random(n_support) < 0.5, 1.0, -1.0)
    u = signs * rng.uniform(gamma, u_max, size=n_support)
    v = rng.standard_normal((n_support, d))
    v -= np.outer(v @ w, w)
    v_norms = np.linalg.norm(v, axis=1)
    v_norms[v_norms == 0] = 1.0
    v /= v_norms[:, None]
    r = rng.uniform(0.0, 1.0, size=n_support) * np.sqrt(
        np.maximum(0.0, 1.0 - u**2)
    )
    X = u[:, None] * w[None, :] + r[:, None] * v
    points = [Point(X[i]) for i in range(n_support)]
    if probs == "uniform":
        p = np.full(n_support, 1.0 / n_support)
    elif probs == "random":
        raw = rng.random(n_support) + 1e-3
        p = raw / raw.sum()
    else:
        raise PreconditionError("probs must be 'uniform' or 'random'")
    dist = FiniteDistribution(points, p)
    return LabeledSource(dist, LinearThreshold(w, gamma))


def uniform_hypercube_source(d: int, target: TargetFunction) -> LabeledSource:
    """Uniform distribution over all 2^d embedded bit vectors."""
    if d < 1 or d > 16:
        raise PreconditionError("hypercube enumeration supported for 1 <= d <= 16")
    n = 1 << d
    points = []
    for code in range(n):
        bits = [(code >> i) & 1 for i in range(d)]
        points.append(embed_hypercube(bits))
    dist = FiniteDistribution(points, np.full(n, 1.0 / n))
    return LabeledSource(dist, target)


def random_decision_list(d: int, length: int, seed: int) -> DecisionList:
    """Random list over `length` distinct variables with random polarities."""
    if length > d:
        raise PreconditionError("length cannot exceed the number of variables")
    rng = generator(derive_seed(seed, "random-dl"))
    variables = rng.permutation(d)[:length]
    items = []
    for i in variables:
        polarity = int(rng.integers(0, 2))
        output = -1 if rng.random() < 0.5 else 1
        items.append((int(i), polarity, output))
    default = -1 if rng.random() < 0.5 else 1
    return DecisionList(items, default)


# ---------------------------------------------------------------------------
# Serialization.


def target_from_json(obj: dict, support: Sequence[Point] | None = None) -> TargetFunction:
    kind = obj.get("kind")
    if kind == "linear_threshold":
        return LinearThreshold(np.asarray(obj["w"], dtype=float), float(obj["gamma"]))
    if kind == "decision_list":
        return DecisionList([tuple(item) for item in obj["items"]], obj["default"])
    if kind == "explicit":
        if support is None:
            raise PreconditionError("explicit targets need the support ordering")
        return Explicit.from_support(support, [int(v) for v in obj["labels"]])
    raise PreconditionError(f"unknown target kind {kind!r}")


def source_to_json(src: LabeledSource) -> dict:
    if isinstance(src.target, Explicit):
        target_obj = {
            "kind": "explicit",
            "labels": [int(v) for v in src.labels],
        }
    else:
        target_obj = src.target.to_json()
    return {
        "dim": src.dim,
        "support": [[float(v) for v in p.coords] for p in src.dist.support],
        "probs": [float(v) for v in src.dist.probs],
        "target": target_obj,
    }


def source_from_json(obj: dict) -> LabeledSource:
    support = [Point(np.asarray(row, dtype=float)) for row in obj["support"]]
    for p in support:
        if p.dim != int(obj["dim"]):
            raise PreconditionError("support dimension disagrees with dim field")
    dist = FiniteDistribution(support, [float(v) for v in obj["probs"]])
    target = target_from_json(obj["target"], support)
    return LabeledSource(dist, target)


def dataset_to_csv(ds: Dataset) -> str:
    """Columns x_1..x_d,label; floats rendered with repr for stability."""
    buf = io.StringIO()
    d = ds.X.shape[1]
    buf.write(",".join([f"x_{j + 1}" for j in range(d)] + ["label"]) + "\n")
    for i in range(len(ds)):
        row = [repr(float(v)) for v in ds.X[i]] + [str(int(ds.y[i]))]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def dataset_from_csv(text: str, seed: int = 0) -> Dataset:
    lines = [line for line in text.strip().splitlines() if line]
    header = lines[0].split(",")
    if header[-1] != "label" or not header[0].startswith("x_"):
        raise PreconditionError("unexpected CSV header")
    rows = [line.split(",") for line in lines[1:]]
    X = np.array([[float(v) for v in row[:-1]] for row in rows])
    y = np.array([float(row[-1]) for row in rows])
    return Dataset(X, y, seed)
