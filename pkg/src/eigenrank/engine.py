"""Eigenrank selection loop and ensemble-disagreement failure prediction.

The engine never looks inside a model. It talks to a *segmenter backend*
exposing ``train(case_ids, seed) -> model`` and ``predict(model, case_id) ->
BinaryMask``; everything else (pools, ledgers, subset bookkeeping, evaluation
against ground truth) lives here.

Selection works in rounds. Two random subsets seed a committee of two models;
the cases on which the committee agrees least form the next subset, a model is
trained on it and joins the committee, and so on. With more than two models,
agreement on a case is the largest eigenvalue of the Dice matrix of the
committee's predictions.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .dicematrix import build_dice_matrix, eigenvalues, von_neumann_entropy
from .masks import METRICS, BinaryMask

logger = logging.getLogger(__name__)

__all__ = [
    "Case",
    "Pool",
    "SegmenterBackend",
    "SelectionError",
    "BackendFailure",
    "IterationRecord",
    "SelectionState",
    "SelectionReport",
    "EvaluationResult",
    "FailureIteration",
    "FailureReport",
    "ComparisonRow",
    "derive_seed",
    "initialize",
    "iterate",
    "run_selection",
    "score_case",
    "rank_failures_fixed",
    "run_failure_elimination",
    "evaluate_model",
    "compare_to_random",
]

SCORE_MODES = ("lambda_max", "entropy")


class SelectionError(ValueError):
    """Invalid selection request (pool too small, bad k, ...)."""


class BackendFailure(RuntimeError):
    """Wraps an exception raised by a backend with the case/model it concerned."""


@dataclass(frozen=True)
class Case:
    id: str
    image: Optional[Path] = None
    truth: Optional[Path] = None
    difficulty: Optional[float] = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("case id must be nonempty")


@dataclass(frozen=True)
class Pool:
    """Ordered collection of cases with optional in-memory ground truth."""

    cases: tuple[Case, ...]
    seed: int = 0
    truths: Mapping[str, BinaryMask] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "cases", tuple(self.cases))
        seen = set()
        for c in self.cases:
            if c.id in seen:
                raise ValueError(f"duplicate case id {c.id!r} in pool")
            seen.add(c.id)
        unknown = set(self.truths) - seen
        if unknown:
            raise ValueError(f"ground truth given for unknown cases: {sorted(unknown)}")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.cases)

    def __len__(self):
        return len(self.cases)

    def subset(self, ids: Iterable[str]) -> "Pool":
        keep = set(ids)
        return Pool(
            tuple(c for c in self.cases if c.id in keep),
            seed=self.seed,
            truths={k: v for k, v in self.truths.items() if k in keep},
        )


@runtime_checkable
class SegmenterBackend(Protocol):
    """Anything that can train a segmentation model on labeled cases and apply it.

    Both methods must be deterministic: ``train`` given ``(case_ids, seed)``
    and ``predict`` given ``(model, case_id)``.
    """

    name: str

    def train(self, case_ids: Sequence[str], seed: int) -> Any: ...

    def predict(self, model: Any, case_id: str) -> BinaryMask: ...


def derive_seed(seed: int, purpose: str, *counters: int) -> int:
    """Independent 63-bit seed for one ``(purpose, counters...)`` stream.

    Streams are keyed rather than drawn sequentially, so execution order
    (serial or parallel) never changes the numbers a stream produces.
    """
    tag = int.from_bytes(hashlib.blake2b(purpose.encode(), digest_size=4).digest(), "little")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, tag, *counters])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _rng(seed: int, purpose: str, *counters: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, purpose, *counters))


def _model_ref(backend: SegmenterBackend, model: Any) -> str:
    ref = getattr(backend, "model_ref", None)
    return ref(model) if ref is not None else repr(model)


def _train(backend: SegmenterBackend, case_ids: Sequence[str], seed: int) -> Any:
    try:
        return backend.train(list(case_ids), seed)
    except Exception as exc:
        raise BackendFailure(
            f"backend {backend.name!r} failed to train on {len(case_ids)} cases "
            f"({', '.join(case_ids[:5])}{'...' if len(case_ids) > 5 else ''}): {exc}"
        ) from exc


class _Predictions:
    """Memoized predictions keyed by (model index, case id)."""

    def __init__(self, backend: SegmenterBackend, jobs: int = 1):
        self.backend = backend
        self.jobs = max(1, int(jobs))
        self._cache: dict[tuple[int, str], BinaryMask] = {}

    def _one(self, idx: int, model: Any, case_id: str) -> BinaryMask:
        try:
            return self.backend.predict(model, case_id)
        except Exception as exc:
            raise BackendFailure(
                f"backend {self.backend.name!r} failed to predict case {case_id!r} "
                f"with model #{idx + 1}: {exc}"
            ) from exc

    def fill(self, models: Sequence[Any], case_ids: Sequence[str]) -> None:
        todo = [
            (i, m, c)
            for c in case_ids
            for i, m in enumerate(models)
            if (i, c) not in self._cache
        ]
        if self.jobs > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as ex:
                masks = list(ex.map(lambda job: self._one(*job), todo))
        else:
            masks = [self._one(*job) for job in todo]
        for (i, _, c), mask in zip(todo, masks):
            self._cache[(i, c)] = mask

    def get(self, idx: int, case_id: str) -> BinaryMask:
        return self._cache[(idx, case_id)]


def _committee_score(masks: Sequence[BinaryMask], metric: str, score_mode: str) -> float:
    if score_mode not in SCORE_MODES:
        raise ValueError(f"unknown score mode {score_mode!r}; expected one of {SCORE_MODES}")
    lam = eigenvalues(build_dice_matrix(masks, metric))
    if score_mode == "entropy":
        return von_neumann_entropy(lam, normalized=True)
    return float(lam[0])


def _select_k(ledger: Mapping[str, float], k: int, score_mode: str) -> tuple[str, ...]:
    # Most disagreement first: smallest lambda_max or largest entropy; ties by id.
    sign = -1.0 if score_mode == "entropy" else 1.0
    ranked = sorted(ledger, key=lambda cid: (sign * ledger[cid], cid))
    return tuple(ranked[:k])


@dataclass(frozen=True)
class IterationRecord:
    """How subset number ``index`` was chosen.

    ``committee`` is the number of models whose disagreement produced the
    ledger; 0 marks the two random seed subsets, whose ledger is empty.
    """

    index: int
    committee: int
    subset: tuple[str, ...]
    ledger: Mapping[str, float]


@dataclass
class SelectionState:
    """Mutable bookkeeping of one selection run.

    ``selected`` always holds one subset more than ``models``: the newest
    subset is chosen from the current ledger but trained only on the next
    :func:`iterate` call.
    """

    k: int
    seed: int
    metric: str = "dice"
    score_mode: str = "lambda_max"
    selected: list[tuple[str, ...]] = field(default_factory=list)
    models: list[Any] = field(default_factory=list)
    scores: dict[str, float] = field(default_factory=dict)
    iteration: int = 0
    records: list[IterationRecord] = field(default_factory=list)
    predictions: Optional[_Predictions] = field(default=None, repr=False)

    @property
    def chosen(self) -> set[str]:
        return {c for s in self.selected for c in s}


def initialize(
    pool: Pool,
    k: int,
    backend: SegmenterBackend,
    seed: int,
    *,
    metric: str = "dice",
    score_mode: str = "lambda_max",
    jobs: int = 1,
) -> SelectionState:
    """Seed the committee with two random disjoint subsets and pick the third.

    The first two subsets are drawn uniformly without replacement; a model is
    trained on each, and every other case is scored by the overlap between
    the two models' predictions. The ``k`` lowest-overlap cases form the
    third subset.
    """
    if k < 1:
        raise SelectionError(f"subset size k must be >= 1, got {k}")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    if score_mode not in SCORE_MODES:
        raise ValueError(f"unknown score mode {score_mode!r}")
    if len(pool) < 3 * k:
        raise SelectionError(f"pool of {len(pool)} cases is too small for k={k}; need at least {3 * k}")

    ids = pool.ids
    order = _rng(seed, "init-subsets").permutation(len(ids))
    s1 = tuple(ids[i] for i in order[:k])
    s2 = tuple(ids[i] for i in order[k : 2 * k])
    state = SelectionState(k=k, seed=seed, metric=metric, score_mode=score_mode)
    state.predictions = _Predictions(backend, jobs)
    state.selected = [s1, s2]
    state.models = [_train(backend, s1, derive_seed(seed, "train", 1)),
                    _train(backend, s2, derive_seed(seed, "train", 2))]
    for i, s in enumerate(state.selected, 1):
        state.records.append(IterationRecord(index=i, committee=0, subset=s, ledger={}))

    remaining = [c for c in ids if c not in state.chosen]
    state.predictions.fill(state.models, remaining)
    pair = METRICS[metric]
    ledger = {}
    for c in remaining:
        a, b = state.predictions.get(0, c), state.predictions.get(1, c)
        if score_mode == "entropy":
            ledger[c] = _committee_score([a, b], metric, score_mode)
        else:
            ledger[c] = pair(a, b)
    s3 = _select_k(ledger, k, score_mode)
    state.scores = ledger
    state.selected.append(s3)
    state.iteration = 2
    state.records.append(IterationRecord(index=3, committee=2, subset=s3, ledger=dict(ledger)))
    logger.debug("initialized: S1=%s S2=%s S3=%s", s1, s2, s3)
    return state


def iterate(state: SelectionState, pool: Pool, backend: SegmenterBackend) -> SelectionState:
    """Train on the newest subset, rescore unselected cases, append the next subset."""
    chosen = state.chosen
    remaining = [c for c in pool.ids if c not in chosen]
    if len(remaining) < state.k:
        raise SelectionError(
            f"only {len(remaining)} unselected cases remain, need k={state.k} "
            f"(short by {state.k - len(remaining)})"
        )
    t = len(state.models) + 1
    state.models.append(_train(backend, state.selected[-1], derive_seed(state.seed, "train", t)))
    if state.predictions is None:
        state.predictions = _Predictions(backend)
    state.predictions.fill(state.models, remaining)
    # Ledger starts empty each round; earlier scores are discarded.
    ledger = {
        c: _committee_score(
            [state.predictions.get(i, c) for i in range(t)], state.metric, state.score_mode
        )
        for c in remaining
    }
    nxt = _select_k(ledger, state.k, state.score_mode)
    state.scores = ledger
    state.selected.append(nxt)
    state.iteration = t
    state.records.append(IterationRecord(index=t + 1, committee=t, subset=nxt, ledger=dict(ledger)))
    logger.debug("iteration %d: selected %s", t, nxt)
    return state


@dataclass(frozen=True)
class SelectionReport:
    k: int
    iterations: int
    seed: int
    backend: str
    metric: str
    score_mode: str
    subsets: tuple[tuple[str, ...], ...]
    trailing: tuple[str, ...]
    records: tuple[IterationRecord, ...]
    models: tuple[str, ...]

    @property
    def selected(self) -> tuple[str, ...]:
        return tuple(c for s in self.subsets for c in s)


def run_selection(
    pool: Pool,
    k: int,
    iterations: int,
    backend: SegmenterBackend,
    seed: int,
    *,
    metric: str = "dice",
    score_mode: str = "lambda_max",
    jobs: int = 1,
) -> SelectionReport:
    """Select ``k * iterations`` cases as subsets S1..ST.

    A model is trained for every one of the T subsets; the subset constructed
    after the last training round is recorded as ``trailing`` but not counted.
    """
    if iterations < 2:
        raise SelectionError(f"need at least 2 iterations, got {iterations}")
    if len(pool) < (iterations + 1) * k:
        raise SelectionError(
            f"pool of {len(pool)} cases is too small for k={k}, T={iterations}; "
            f"need at least {(iterations + 1) * k}"
        )
    state = initialize(pool, k, backend, seed, metric=metric, score_mode=score_mode, jobs=jobs)
    for _ in range(3, iterations + 1):
        iterate(state, pool, backend)
    return SelectionReport(
        k=k,
        iterations=iterations,
        seed=seed,
        backend=backend.name,
        metric=metric,
        score_mode=score_mode,
        subsets=tuple(state.selected[:iterations]),
        trailing=state.selected[iterations],
        records=tuple(state.records),
        models=tuple(_model_ref(backend, m) for m in state.models),
    )


def score_case(
    models: Sequence[Any],
    case_id: str,
    backend: SegmenterBackend,
    *,
    metric: str = "dice",
) -> float:
    """Largest eigenvalue of the Dice matrix of all models' predictions on one case."""
    if len(models) < 2:
        raise SelectionError(f"scoring needs at least 2 models, got {len(models)}")
    preds = _Predictions(backend)
    preds.fill(models, [case_id])
    return _committee_score([preds.get(i, case_id) for i in range(len(models))], metric, "lambda_max")


def rank_failures_fixed(
    models: Sequence[Any],
    pool: Pool,
    backend: SegmenterBackend,
    *,
    metric: str = "dice",
    jobs: int = 1,
) -> list[tuple[str, float]]:
    """Score every case with a frozen ensemble, most disagreement first.

    Needs no ground truth, so it can run on incoming clinical data.
    """
    if len(models) < 2:
        raise SelectionError(f"ranking needs at least 2 models, got {len(models)}")
    preds = _Predictions(backend, jobs)
    preds.fill(models, pool.ids)
    scored = [
        (c, _committee_score([preds.get(i, c) for i in range(len(models))], metric, "lambda_max"))
        for c in pool.ids
    ]
    return sorted(scored, key=lambda cs: (cs[1], cs[0]))


@dataclass(frozen=True)
class EvaluationResult:
    mean: float
    stdev: float
    scores: Mapping[str, float]


def evaluate_model(
    model: Any,
    case_ids: Sequence[str],
    backend: SegmenterBackend,
    truths: Mapping[str, BinaryMask],
    *,
    metric: str = "dice",
) -> EvaluationResult:
    """Overlap of the model's predictions with ground truth.

    ``stdev`` is the population standard deviation.
    """
    missing = [c for c in case_ids if c not in truths]
    if missing:
        raise KeyError(f"no ground truth for case {missing[0]!r}" + (
            f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
    score = METRICS[metric]
    scores = {}
    for c in case_ids:
        try:
            pred = backend.predict(model, c)
        except Exception as exc:
            raise BackendFailure(f"backend {backend.name!r} failed to predict case {c!r}: {exc}") from exc
        scores[c] = score(pred, truths[c])
    if not scores:
        raise ValueError("cannot evaluate on an empty case list")
    vals = np.array(list(scores.values()))
    return EvaluationResult(mean=float(vals.mean()), stdev=float(vals.std()), scores=scores)


def _stats(values: Sequence[float]) -> tuple[Optional[float], Optional[float]]:
    if len(values) == 0:
        return None, None
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


@dataclass(frozen=True)
class FailureIteration:
    iteration: int
    eliminated: tuple[str, ...]
    ledger: Mapping[str, float]
    eliminated_mean: Optional[float] = None
    eliminated_stdev: Optional[float] = None
    remaining_mean: Optional[float] = None
    remaining_stdev: Optional[float] = None
    remaining_count: int = 0


@dataclass(frozen=True)
class FailureReport:
    k: int
    iterations: int
    seed: int
    backend: str
    committee_seed_cases: tuple[str, ...]
    pool_mean: Optional[float]
    pool_stdev: Optional[float]
    rounds: tuple[FailureIteration, ...]
    probe_scores: Mapping[str, float]

    @property
    def eliminated(self) -> tuple[str, ...]:
        return tuple(c for r in self.rounds for c in r.eliminated)


def run_failure_elimination(
    pool: Pool,
    k: int,
    iterations: int,
    backend: SegmenterBackend,
    probe_model: Any,
    seed: int,
    *,
    truths: Optional[Mapping[str, BinaryMask]] = None,
    metric: str = "dice",
    jobs: int = 1,
) -> FailureReport:
    """Iteratively eliminate batches of ``k`` hard cases with the selection loop.

    Iteration ``i`` eliminates the batch the committee picks after its
    ``i + 1``-th model; the two random subsets that seed the committee are not
    counted as eliminated and stay in the remaining set. When ground truth is
    available, the probe model's true Dice is summarised over all cases
    eliminated so far and over the remaining ones.
    """
    if iterations < 0:
        raise SelectionError("iterations must be >= 0")
    truths = pool.truths if truths is None else truths
    probe_scores: dict[str, float] = {}
    if truths and all(c in truths for c in pool.ids):
        probe_scores = dict(evaluate_model(probe_model, pool.ids, backend, truths, metric=metric).scores)
    pool_mean, pool_std = _stats(list(probe_scores.values()))

    rounds: list[FailureIteration] = []
    seed_cases: tuple[str, ...] = ()
    if iterations > 0:
        if len(pool) < (iterations + 2) * k:
            raise SelectionError(
                f"pool of {len(pool)} cases is too small for k={k}, {iterations} iterations; "
                f"need at least {(iterations + 2) * k}"
            )
        state = initialize(pool, k, backend, seed, metric=metric, jobs=jobs)
        seed_cases = state.selected[0] + state.selected[1]
        eliminated: list[str] = []
        for i in range(1, iterations + 1):
            if i > 1:
                iterate(state, pool, backend)
            batch = state.selected[-1]
            eliminated.extend(batch)
            gone = set(eliminated)
            rest = [c for c in pool.ids if c not in gone]
            e_mean = e_std = r_mean = r_std = None
            if probe_scores:
                e_mean, e_std = _stats([probe_scores[c] for c in eliminated])
                r_mean, r_std = _stats([probe_scores[c] for c in rest])
            rounds.append(
                FailureIteration(
                    iteration=i,
                    eliminated=batch,
                    ledger=dict(state.scores),
                    eliminated_mean=e_mean,
                    eliminated_stdev=e_std,
                    remaining_mean=r_mean,
                    remaining_stdev=r_std,
                    remaining_count=len(rest),
                )
            )
    return FailureReport(
        k=k,
        iterations=iterations,
        seed=seed,
        backend=backend.name,
        committee_seed_cases=seed_cases,
        pool_mean=pool_mean,
        pool_stdev=pool_std,
        rounds=tuple(rounds),
        probe_scores=probe_scores,
    )


@dataclass(frozen=True)
class ComparisonRow:
    seed: int
    t: int
    protocol: str  # "common" or "specific"
    eigenrank_mean: float
    eigenrank_stdev: float
    random_mean: float
    random_stdev: float
    eigenrank_holdout: int
    random_holdout: int


def compare_to_random(
    pool: Pool,
    k: int,
    iterations: int,
    backend: SegmenterBackend,
    seeds: Sequence[int],
    *,
    truths: Optional[Mapping[str, BinaryMask]] = None,
    metric: str = "dice",
    random_order: Optional[Callable[[int, SelectionReport], Sequence[str]]] = None,
    jobs: int = 1,
) -> list[ComparisonRow]:
    """Train probe models on Eigenrank's and on random selections of equal size.

    For each seed and each ``t`` in ``1..iterations`` one probe is trained on
    the first ``t`` Eigenrank subsets and one on the first ``t * k`` cases of
    a random permutation. Both are evaluated on

    * ``"common"``: cases selected by neither method after the final iteration;
    * ``"specific"``: each method's own complement at iteration ``t``.

    ``random_order(seed, report)`` overrides the random permutation.
    """
    truths = pool.truths if truths is None else truths
    ids = pool.ids
    rows: list[ComparisonRow] = []
    for seed in seeds:
        report = run_selection(pool, k, iterations, backend, seed, metric=metric, jobs=jobs)
        if random_order is None:
            perm = _rng(seed, "random-arm").permutation(len(ids))
            rand = [ids[i] for i in perm[: iterations * k]]
        else:
            rand = list(random_order(seed, report))[: iterations * k]
        if len(rand) < iterations * k:
            raise SelectionError("random arm produced too few cases")
        eig_final = set(report.selected)
        common = [c for c in ids if c not in eig_final and c not in set(rand)]
        for t in range(1, iterations + 1):
            eig_sel = [c for s in report.subsets[:t] for c in s]
            rand_sel = rand[: t * k]
            probe_seed = derive_seed(seed, "probe", t)
            eig_model = _train(backend, eig_sel, probe_seed)
            rand_model = _train(backend, rand_sel, probe_seed)
            eig_spec = [c for c in ids if c not in set(eig_sel)]
            rand_spec = [c for c in ids if c not in set(rand_sel)]
            for protocol, e_cases, r_cases in (
                ("common", common, common),
                ("specific", eig_spec, rand_spec),
            ):
                if not e_cases or not r_cases:
                    continue
                e = evaluate_model(eig_model, e_cases, backend, truths, metric=metric)
                r = evaluate_model(rand_model, r_cases, backend, truths, metric=metric)
                rows.append(
                    ComparisonRow(
                        seed=seed,
                        t=t,
                        protocol=protocol,
                        eigenrank_mean=e.mean,
                        eigenrank_stdev=e.stdev,
                        random_mean=r.mean,
                        random_stdev=r.stdev,
                        eigenrank_holdout=len(e_cases),
                        random_holdout=len(r_cases),
                    )
                )
    return rows
