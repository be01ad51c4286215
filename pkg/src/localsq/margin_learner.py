"""Label-non-adaptive large-margin halfspace learner.

The learner minimizes a convex surrogate F over the unit ball whose value
at any perfect margin separator is zero. F splits into a label-free part
(whose subgradient varies with the iterate and is estimated by adaptive but
label-independent queries) and a linear label-dependent part whose gradient
is a constant vector, estimated once with one round of statistical queries.
Projected subgradient descent on the split therefore touches labels only in
its opening round. A seeded Gaussian random projection brings the ambient
dimension down to O(log(1/delta) / gamma^2) first, at the cost of halving
the margin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_seed, generator
from .comm import comm_batch_size, compile_sq_to_comm
from .core import (
    Explicit,
    FiniteDistribution,
    LabeledSource,
    LinearThreshold,
    Point,
    SampleStream,
    signp,
)
from .errors import PreconditionError, ProtocolError
from .ldp import compile_sq_to_ldp, ldp_batch_size
from .sq import (
    AskFn,
    ExactOracle,
    InteractivityTranscript,
    StatQuery,
    assert_label_non_adaptive,
    run_driver,
)

JL_CONSTANT = 32.0


@dataclass(frozen=True)
class SurrogateParams:
    """Margin, target error, and surrogate slack for a working dimension.

    beta defaults to gamma^2 / sqrt(dim), half the largest value for which
    driving the surrogate below alpha*beta forces classification error
    below alpha; the headroom absorbs oracle noise.
    """

    gamma: float
    alpha: float
    dim: int
    beta: float | None = None

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise PreconditionError("gamma must lie in (0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise PreconditionError("alpha must lie in (0, 1)")
        if self.dim < 1:
            raise PreconditionError("dim must be >= 1")
        if self.beta is None:
            object.__setattr__(
                self, "beta", self.gamma**2 / math.sqrt(self.dim)
            )
        if not 0.0 < self.beta < 2.0 * self.gamma**2 / math.sqrt(self.dim):
            raise PreconditionError(
                "beta must lie in (0, 2 gamma^2 / sqrt(dim))"
            )

    @property
    def lipschitz(self) -> float:
        return 4.0 * self.dim

    def iterations_formula(self) -> int:
        """Descent horizon guaranteeing surrogate value <= alpha*beta."""
        return math.ceil((4.0 * self.lipschitz / (self.alpha * self.beta)) ** 2)

    def coord_tolerance_formula(self) -> float:
        """Per-coordinate query tolerance keeping gradient bias <= alpha*beta/4."""
        return (self.alpha * self.beta) / (
            4.0 * math.sqrt(self.dim) * (2.0 * self.dim + 1.0)
        )


def _margin_terms(w: np.ndarray, X: np.ndarray, gamma: float):
    """Per-example matrices u + gamma*x_i and u - gamma*x_i over coordinates."""
    u = X @ w
    return u, u[:, None] + gamma * X, u[:, None] - gamma * X


def surrogate_value(w: np.ndarray, src: LabeledSource,
                    params: SurrogateParams) -> float:
    """Exact surrogate value over the finite source; nonnegative everywhere."""
    w = np.asarray(w, dtype=float).reshape(-1)
    X = src.dist.matrix
    if w.shape[0] != X.shape[1]:
        raise PreconditionError("dimension mismatch between w and source")
    d = X.shape[1]
    u, plus, minus = _margin_terms(w, X, params.gamma)
    per_example = (
        np.abs(plus).sum(axis=1)
        + np.abs(minus).sum(axis=1)
        - 2.0 * d * src.labels * u
    )
    return float(src.dist.probs @ per_example)


def sign_weight(w: np.ndarray, X: np.ndarray, gamma: float) -> np.ndarray:
    """k(x) = sum_i sign(u + gamma x_i) + sign(u - gamma x_i), sign(0) = +1."""
    _, plus, minus = _margin_terms(w, X, gamma)
    return signp(plus).sum(axis=1) + signp(minus).sum(axis=1)


def exact_grad_f1(w: np.ndarray, X: np.ndarray, probs: np.ndarray,
                  gamma: float) -> np.ndarray:
    """E[k(x) x] computed exactly over an explicit support."""
    k = sign_weight(np.asarray(w, dtype=float), X, gamma)
    return (probs * k) @ X


def exact_grad_f2(X: np.ndarray, probs: np.ndarray,
                  labels: np.ndarray) -> np.ndarray:
    """-2d E[l x] computed exactly over an explicit support."""
    d = X.shape[1]
    return -2.0 * d * ((probs * labels) @ X)


def grad_f1_queries(w: np.ndarray, params: SurrogateParams,
                    query_tau: float) -> list[StatQuery]:
    """One label-independent query per coordinate, normalized by 2*dim.

    The sign-weight k(x) is shared across the round's queries through a
    per-support cache, since every query in the round evaluates it on the
    same batch rows.
    """
    w = np.array(w, dtype=float)
    d = params.dim
    scale = 2.0 * d
    cache: dict[int, np.ndarray] = {}

    def k_of(X: np.ndarray) -> np.ndarray:
        key = id(X)
        if key not in cache:
            cache[key] = sign_weight(w, X, params.gamma)
        return cache[key]

    queries = []
    for j in range(d):
        def fn(X, y, j=j):
            return k_of(X) * X[:, j] / scale

        queries.append(
            StatQuery(fn=fn, tau=query_tau, label_dependent=False,
                      name=f"signsum-x{j}", scale=scale)
        )
    return queries


def grad_f2_queries(params: SurrogateParams, query_tau: float) -> list[StatQuery]:
    """One label-dependent query per coordinate: the mean of y * x_j."""
    d = params.dim
    queries = []
    for j in range(d):
        def fn(X, y, j=j):
            return y * X[:, j]

        queries.append(
            StatQuery(fn=fn, tau=query_tau, label_dependent=True,
                      name=f"label-x{j}", scale=-2.0 * d)
        )
    return queries


@dataclass
class MarginLearnerState:
    """Mutable descent state; the label gradient is computed exactly once."""

    w: np.ndarray
    grad_f2: np.ndarray | None = None
    iteration: int = 0
    transcript: InteractivityTranscript | None = None


def grad_f1(w: np.ndarray, ask: AskFn, params: SurrogateParams,
            per_coord_tol: float, round_index: int = 0) -> np.ndarray:
    """Estimate E[k(x) x] through label-independent queries at round_index."""
    if not per_coord_tol > 0:
        raise PreconditionError("tolerance must be positive")
    scale = 2.0 * params.dim
    queries = grad_f1_queries(w, params, per_coord_tol / scale)
    return scale * np.array([ask(q, round_index) for q in queries])


def grad_f2(ask: AskFn, params: SurrogateParams, per_coord_tol: float,
            state: MarginLearnerState | None = None) -> np.ndarray:
    """Estimate -2d E[l x] with round-0 queries; refuses a second pass."""
    if not per_coord_tol > 0:
        raise PreconditionError("tolerance must be positive")
    if state is not None and state.grad_f2 is not None:
        raise ProtocolError(
            "label-dependent gradient already computed for this run"
        )
    scale = 2.0 * params.dim
    queries = grad_f2_queries(params, per_coord_tol / scale)
    out = -scale * np.array([ask(q, 0) for q in queries])
    if state is not None:
        state.grad_f2 = out
    return out


@dataclass(frozen=True)
class ProjectionMap:
    """Seeded Gaussian projection onto a lower-dimensional ball."""

    matrix: np.ndarray
    source_dim: int
    target_dim: int
    seed: int

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Project rows and radially rescale any image outside the unit ball."""
        mapped = np.asarray(X, dtype=float) @ self.matrix.T
        norms = np.linalg.norm(mapped, axis=1)
        over = norms > 1.0
        if np.any(over):
            mapped = mapped.copy()
            mapped[over] /= norms[over][:, None]
        return mapped


def jl_dim(gamma: float, delta: float) -> int:
    """Target dimension ceil(32 ln(1/delta) / gamma^2)."""
    if not 0.0 < gamma <= 1.0:
        raise PreconditionError("gamma must lie in (0, 1]")
    if not 0.0 < delta < 1.0:
        raise PreconditionError("delta must lie in (0, 1)")
    return math.ceil(JL_CONSTANT * math.log(1.0 / delta) / gamma**2)


def identity_projection(d: int) -> ProjectionMap:
    return ProjectionMap(matrix=np.eye(d), source_dim=d, target_dim=d, seed=0)


def jl_project(src: LabeledSource, gamma: float, delta: float,
               seed: int) -> tuple[ProjectionMap, LabeledSource]:
    """Map a source into dimension jl_dim(gamma, delta), preserving labels.

    Entries are i.i.d. Gaussians scaled by 1/sqrt(d'). With probability at
    least 1 - delta over the map, all but a delta-fraction of the mass keeps
    margin gamma/2 along the image of the original normal.
    """
    d_prime = jl_dim(gamma, delta)
    d = src.dim
    rng = generator(derive_seed(seed, "jl-map"))
    matrix = rng.standard_normal((d_prime, d)) / math.sqrt(d_prime)
    proj = ProjectionMap(matrix=matrix, source_dim=d, target_dim=d_prime,
                         seed=seed)
    mapped = proj.apply(src.dist.matrix)
    points = [Point(mapped[i]) for i in range(mapped.shape[0])]
    dist = FiniteDistribution(points, src.dist.probs)
    target = Explicit.from_support(points, [int(v) for v in src.labels])
    return proj, LabeledSource(dist, target)


@dataclass(frozen=True)
class PsgdSettings:
    """Execution knobs for the descent loop.

    iterations caps the executed horizon; the guarantee-grade horizon from
    the closed-form formula is reported alongside but is far too large to
    execute at interesting sizes. per_coord_tol is the tolerance requested
    per gradient coordinate (the formula default is likewise impractical
    under simulation, so compiled runs pass an explicit feasible value).
    """

    iterations: int | None = None
    per_coord_tol: float | None = None

    def resolve(self, params: SurrogateParams) -> tuple[int, float]:
        formula_t = params.iterations_formula()
        t = self.iterations if self.iterations is not None else min(
            formula_t, 300
        )
        if t < 1:
            raise PreconditionError("need at least one iteration")
        tol = (
            self.per_coord_tol
            if self.per_coord_tol is not None
            else params.coord_tolerance_formula()
        )
        if not tol > 0:
            raise PreconditionError("tolerance must be positive")
        return t, tol


@dataclass
class LearnerReport:
    """Query accounting and optimization summary for one descent run."""

    dim: int
    iterations_executed: int
    iterations_formula: int
    eta: float
    per_coord_tol: float
    queries_total: int = 0
    queries_label_dependent: int = 0
    rounds: int = 0
    label_non_adaptive: bool = True

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "iterations_executed": self.iterations_executed,
            "iterations_formula": self.iterations_formula,
            "eta": self.eta,
            "per_coord_tol": self.per_coord_tol,
            "queries_total": self.queries_total,
            "queries_label_dependent": self.queries_label_dependent,
            "rounds": self.rounds,
            "label_non_adaptive": self.label_non_adaptive,
        }


class HalfspaceDriver:
    """Query driver running averaged projected subgradient descent.

    Round 0 carries the dim label-dependent correlation queries plus the
    label-independent queries for the gradient at w0 = 0; every later round
    carries only the label-independent queries at the current iterate, so
    the protocol is label-non-adaptive by construction.
    """

    def __init__(self, params: SurrogateParams, settings: PsgdSettings):
        self.params = params
        self.iterations, self.per_coord_tol = settings.resolve(params)
        self.eta = 1.0 / (params.lipschitz * math.sqrt(self.iterations))
        self.max_queries = params.dim * (self.iterations + 1)
        self.report = LearnerReport(
            dim=params.dim,
            iterations_executed=self.iterations,
            iterations_formula=params.iterations_formula(),
            eta=self.eta,
            per_coord_tol=self.per_coord_tol,
        )
        self.state = MarginLearnerState(w=np.zeros(params.dim))
        self._w_sum = np.zeros(params.dim)
        self._done = False

    def begin(self) -> list[StatQuery]:
        d = self.params.dim
        tau = self.per_coord_tol / (2.0 * d)
        queries = grad_f2_queries(self.params, tau)
        queries += grad_f1_queries(self.state.w, self.params, tau)
        self.report.queries_total += len(queries)
        self.report.queries_label_dependent += d
        self.report.rounds = 1
        return queries

    def feed(self, answers) -> list[StatQuery] | None:
        d = self.params.dim
        answers = np.asarray(answers, dtype=float)
        if self.state.grad_f2 is None:
            if answers.shape[0] != 2 * d:
                raise ProtocolError("round 0 expects 2*dim answers")
            self.state.grad_f2 = -2.0 * d * answers[:d]
            g1 = 2.0 * d * answers[d:]
        else:
            if answers.shape[0] != d:
                raise ProtocolError("gradient rounds expect dim answers")
            g1 = 2.0 * d * answers
        self._step(g1)
        if self.state.iteration >= self.iterations:
            self._done = True
            return None
        queries = grad_f1_queries(
            self.state.w, self.params, self.per_coord_tol / (2.0 * d)
        )
        self.report.queries_total += d
        self.report.rounds += 1
        return queries

    def _step(self, g1: np.ndarray):
        # Average the iterates at which gradients were measured, w0 included.
        self._w_sum += self.state.w
        grad = g1 + self.state.grad_f2
        w = self.state.w - self.eta * grad
        norm = float(np.linalg.norm(w))
        if norm > 1.0:
            w = w / norm
        self.state.w = w
        self.state.iteration += 1

    def result(self) -> np.ndarray:
        if not self._done:
            raise ProtocolError("descent has not finished")
        return self._w_sum / self.iterations


class KnownDistributionDriver:
    """Single-round variant for a public, explicitly known distribution.

    Only the label-dependent correlation queries touch the oracle; every
    label-independent expectation is evaluated locally against the known
    point distribution, so the full protocol is one round of queries.
    """

    def __init__(self, params: SurrogateParams, settings: PsgdSettings,
                 X: np.ndarray, probs: np.ndarray):
        self.params = params
        self.iterations, self.per_coord_tol = settings.resolve(params)
        self.eta = 1.0 / (params.lipschitz * math.sqrt(self.iterations))
        self.max_queries = params.dim
        self.X = np.asarray(X, dtype=float)
        self.probs = np.asarray(probs, dtype=float)
        self.report = LearnerReport(
            dim=params.dim,
            iterations_executed=self.iterations,
            iterations_formula=params.iterations_formula(),
            eta=self.eta,
            per_coord_tol=self.per_coord_tol,
        )
        self._w_bar: np.ndarray | None = None

    def begin(self) -> list[StatQuery]:
        d = self.params.dim
        self.report.queries_total = d
        self.report.queries_label_dependent = d
        self.report.rounds = 1
        return grad_f2_queries(self.params, self.per_coord_tol / (2.0 * d))

    def feed(self, answers) -> None:
        d = self.params.dim
        g2 = -2.0 * d * np.asarray(answers, dtype=float)
        w = np.zeros(d)
        w_sum = np.zeros(d)
        for _ in range(self.iterations):
            w_sum += w
            grad = exact_grad_f1(w, self.X, self.probs, self.params.gamma) + g2
            w = w - self.eta * grad
            norm = float(np.linalg.norm(w))
            if norm > 1.0:
                w = w / norm
        self._w_bar = w_sum / self.iterations
        return None

    def result(self) -> np.ndarray:
        if self._w_bar is None:
            raise ProtocolError("descent has not finished")
        return self._w_bar


def psgd_learn(ask: AskFn, params: SurrogateParams,
               settings: PsgdSettings | None = None
               ) -> tuple[np.ndarray, LearnerReport]:
    """Run the descent against an answer function; returns (w_bar, report)."""
    driver = HalfspaceDriver(params, settings or PsgdSettings())
    run_driver(driver, ask)
    return driver.result(), driver.report


@dataclass(frozen=True)
class HalfspaceHypothesis:
    """x -> sign(<w, proj(x)>); the radial clipping never affects the sign."""

    proj: ProjectionMap
    w: np.ndarray

    def labels_for(self, X: np.ndarray) -> np.ndarray:
        mapped = np.asarray(X, dtype=float) @ self.proj.matrix.T
        return signp(mapped @ self.w)

    def __call__(self, point) -> int:
        return int(self.labels_for(point.coords[None, :])[0])

    def to_json(self) -> dict:
        return {
            "proj": [[float(v) for v in row] for row in self.proj.matrix],
            "w": [float(v) for v in self.w],
        }


@dataclass
class HalfspaceRunInfo:
    """End-to-end run description: projection, learner, and protocol reports."""

    mode: str
    oracle: str
    ambient_dim: int
    working_dim: int
    gamma_effective: float
    projected: bool
    learner: LearnerReport
    rounds: int
    samples_used: int = 0
    protocol_report: object | None = None
    transcript: InteractivityTranscript | None = None


def learn_halfspace(
    src: LabeledSource,
    gamma: float,
    alpha: float,
    delta: float,
    mode: str = "distribution_free",
    oracle: str = "exact",
    epsilon: float = 1.0,
    settings: PsgdSettings | None = None,
    seed: int = 0,
) -> tuple[HalfspaceHypothesis, HalfspaceRunInfo]:
    """Project, then learn a margin-gamma halfspace with the chosen oracle.

    The projection is skipped (identity) when the formula dimension does
    not improve on the ambient one; otherwise the working margin drops to
    gamma/2 and delta is split evenly between projection failure and
    oracle-simulation failure. In known_distribution mode the protocol is
    one round regardless of oracle choice.
    """
    if mode not in ("distribution_free", "known_distribution"):
        raise PreconditionError(f"unknown mode {mode!r}")
    if oracle not in ("exact", "ldp", "comm"):
        raise PreconditionError(f"unknown oracle {oracle!r}")
    d = src.dim
    d_formula = jl_dim(gamma, delta)
    if d_formula < d:
        proj, working = jl_project(src, gamma, delta / 2.0, seed)
        gamma_eff = gamma / 2.0
        sim_delta = delta / 2.0
        projected = True
    else:
        proj, working = identity_projection(d), src
        gamma_eff = gamma
        sim_delta = delta
        projected = False
    params = SurrogateParams(gamma=gamma_eff, alpha=alpha,
                             dim=proj.target_dim)
    if settings is None:
        if oracle == "exact":
            settings = PsgdSettings()
        else:
            # Simulated oracles price precision in samples; these defaults
            # keep batches affordable and were calibrated empirically.
            settings = PsgdSettings(
                iterations=60, per_coord_tol=0.1 * proj.target_dim
            )

    if mode == "known_distribution":
        driver = KnownDistributionDriver(
            params, settings, working.dist.matrix, working.dist.probs
        )
    else:
        driver = HalfspaceDriver(params, settings)

    if oracle == "exact":
        ex = ExactOracle(working)
        run_driver(driver, ex.ask)
        w_bar = driver.result()
        info = HalfspaceRunInfo(
            mode=mode,
            oracle=oracle,
            ambient_dim=d,
            working_dim=proj.target_dim,
            gamma_effective=gamma_eff,
            projected=projected,
            learner=driver.report,
            rounds=ex.transcript.rounds_used(),
            transcript=ex.transcript,
        )
        info.learner.label_non_adaptive = assert_label_non_adaptive(
            ex.transcript
        )
    else:
        tau = driver.per_coord_tol / (2.0 * params.dim)
        if oracle == "ldp":
            batch = ldp_batch_size(driver.max_queries, tau, sim_delta, epsilon)
            stream = SampleStream(
                working, driver.max_queries * batch,
                derive_seed(seed, "halfspace-stream"),
            )
            w_bar, protocol = compile_sq_to_ldp(
                driver, stream, epsilon, tau, sim_delta,
                seed=derive_seed(seed, "halfspace-ldp"),
            )
        else:
            batch = comm_batch_size(driver.max_queries, tau, sim_delta)
            stream = SampleStream(
                working, driver.max_queries * batch,
                derive_seed(seed, "halfspace-stream"),
            )
            w_bar, protocol = compile_sq_to_comm(
                driver, stream, tau, sim_delta,
                seed=derive_seed(seed, "halfspace-comm"),
            )
        info = HalfspaceRunInfo(
            mode=mode,
            oracle=oracle,
            ambient_dim=d,
            working_dim=proj.target_dim,
            gamma_effective=gamma_eff,
            projected=projected,
            learner=driver.report,
            rounds=protocol.rounds,
            samples_used=protocol.samples_used,
            protocol_report=protocol,
        )
        label_dep_rounds = {
            q["round"] for q in protocol.queries if q["label_dep"]
        }
        info.learner.label_non_adaptive = label_dep_rounds <= {0}
    return HalfspaceHypothesis(proj=proj, w=np.asarray(w_bar)), info


def hypothesis_to_json(h: HalfspaceHypothesis) -> str:
    return json.dumps(h.to_json(), sort_keys=True)


def hypothesis_from_json(text: str) -> HalfspaceHypothesis:
    obj = json.loads(text)
    matrix = np.asarray(obj["proj"], dtype=float)
    return HalfspaceHypothesis(
        proj=ProjectionMap(
            matrix=matrix,
            source_dim=matrix.shape[1],
            target_dim=matrix.shape[0],
            seed=0,
        ),
        w=np.asarray(obj["w"], dtype=float),
    )
