"""Desk-scale stand-ins for clinical data, trained networks and matrix simulations.

Two independent pieces live here:

* A synthetic segmentation laboratory. Each case carries one latent scalar,
  its *difficulty*; a synthetic "model" is just the mean difficulty of the
  cases it was trained on, and its predictions degrade with the gap between
  that centre and the case's difficulty. Hard-for-the-committee and
  hard-in-truth therefore coincide by construction.
* A sampler of feasible Dice matrices (unit diagonal, off-diagonals in
  ``[1 - epsilon, 1]``, PSD) and a simulation of how strongly the top
  eigenvalue dominates ``sum(lam * log(lam))`` as the ensemble grows.
"""

from __future__ import annotations

import hashlib
import itertools
import re
from functools import lru_cache
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage

from .dicematrix import DiceMatrix, dominance_ratio, eigenvalues, trio_feasibility
from .engine import Case, Pool, derive_seed
from .masks import BinaryMask, dice

__all__ = [
    "SyntheticCase",
    "SyntheticModel",
    "SyntheticBackend",
    "SimulationConfig",
    "SimulationRow",
    "FeasibilityError",
    "generate_dataset",
    "bimodal_difficulties",
    "synthetic_train",
    "synthetic_predict",
    "case_stream_seed",
    "true_dice_eval",
    "sample_feasible_dice_matrix",
    "run_conjecture_simulation",
]

JITTER = 0.02
FLIP_BASE = 0.01
FLIP_SLOPE = 0.2
RADIUS_SCALE = 4.0
MAX_RETRIES = 10_000


@dataclass(frozen=True, eq=False)
class SyntheticCase:
    id: str
    difficulty: float
    image: np.ndarray
    truth: BinaryMask

    def __post_init__(self):
        if not 0.0 <= self.difficulty <= 1.0:
            raise ValueError(f"difficulty must lie in [0, 1], got {self.difficulty}")
        if self.image.shape != self.truth.shape:
            raise ValueError(f"image shape {self.image.shape} != truth shape {self.truth.shape}")

    def __eq__(self, other):
        if not isinstance(other, SyntheticCase):
            return NotImplemented
        return (
            self.id == other.id
            and self.difficulty == other.difficulty
            and self.truth == other.truth
            and np.array_equal(self.image, other.image)
        )

    __hash__ = None


@dataclass(frozen=True)
class SyntheticModel:
    theta: float
    jitter_seed: int

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")


def _ellipse(width: int, height: int, cx: float, cy: float, ax: float, ay: float) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0


def generate_dataset(
    n: int,
    width: int = 32,
    height: int = 32,
    seed: int = 0,
    difficulties: Optional[Sequence[float]] = None,
) -> list[SyntheticCase]:
    """Generate ``n`` cases with elliptical ground truth and difficulty-scaled noise.

    Difficulties are uniform on [0, 1] unless given explicitly. The image is
    the blurred truth plus uniform noise whose amplitude is half the case's
    difficulty.
    """
    if n < 1:
        raise ValueError(f"dataset needs at least one case, got n={n}")
    if width < 16 or height < 16:
        raise ValueError(f"dimensions must be at least 16x16, got {width}x{height}")
    if difficulties is None:
        difficulties = np.random.default_rng(derive_seed(seed, "difficulty")).uniform(0.0, 1.0, n)
    elif len(difficulties) != n:
        raise ValueError(f"got {len(difficulties)} difficulties for n={n}")
    digits = max(4, len(str(n - 1)))
    cases = []
    for i, diff in enumerate(difficulties):
        rng = np.random.default_rng(derive_seed(seed, "case", i))
        cx = rng.uniform(width / 3, 2 * width / 3)
        cy = rng.uniform(height / 3, 2 * height / 3)
        ax = rng.uniform(width / 8, width / 4)
        ay = rng.uniform(height / 8, height / 4)
        truth = _ellipse(width, height, cx, cy, ax, ay)
        blurred = ndimage.gaussian_filter(truth.astype(float), sigma=1.0)
        noise = rng.uniform(-1.0, 1.0, truth.shape) * 0.5 * float(diff)
        image = np.clip(blurred + noise, 0.0, 1.0)
        image.setflags(write=False)
        cases.append(
            SyntheticCase(
                id=f"case{i:0{digits}d}",
                difficulty=float(diff),
                image=image,
                truth=BinaryMask.from_array(truth),
            )
        )
    return cases


def bimodal_difficulties(
    n_low: int = 90,
    n_high: int = 10,
    low: float = 0.3,
    high: float = 0.9,
    spread: float = 0.05,
    seed: int = 0,
) -> np.ndarray:
    """Difficulties from two clusters, shuffled so case order carries no signal."""
    rng = np.random.default_rng(derive_seed(seed, "bimodal"))
    d = np.concatenate(
        [
            low + rng.uniform(-spread, spread, n_low),
            high + rng.uniform(-spread, spread, n_high),
        ]
    )
    return np.clip(rng.permutation(d), 0.0, 1.0)


def synthetic_train(subset: Sequence[SyntheticCase], seed: int, jitter: float = JITTER) -> SyntheticModel:
    """Centre the model on the subset's mean difficulty, jittered by up to ``jitter``."""
    if not subset:
        raise ValueError("cannot train on an empty subset")
    theta = float(np.mean([c.difficulty for c in subset]))
    if jitter:
        theta += np.random.default_rng(derive_seed(seed, "jitter")).uniform(-jitter, jitter)
    return SyntheticModel(theta=float(np.clip(theta, 0.0, 1.0)), jitter_seed=int(seed))


def case_stream_seed(jitter_seed: int, case_id: str) -> int:
    """64-bit seed for the (model, case) noise stream.

    BLAKE2b-64 over the little-endian 8-byte jitter seed followed by the
    UTF-8 case id; identical on every platform.
    """
    payload = (int(jitter_seed) & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little") + case_id.encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")



@lru_cache(maxsize=64)
def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return xx * xx + yy * yy <= radius * radius


def synthetic_predict(
    model: SyntheticModel,
    case: SyntheticCase,
    *,
    flips: bool = True,
    flip_base: float = FLIP_BASE,
    flip_slope: float = FLIP_SLOPE,
    radius_scale: float = RADIUS_SCALE,
) -> BinaryMask:
    """Corrupt the truth according to how far the case lies from the model's centre.

    With ``gap = |difficulty - theta|``, the truth is dilated or eroded (a
    coin flip from the model/case stream) by a disk of radius
    ``round(radius_scale * gap)``, then each pixel flips independently with
    probability ``flip_base + flip_slope * gap``. The uniforms behind the
    flips are drawn before the rate is applied, so for a fixed (model, case)
    stream a larger gap flips a superset of pixels.
    """
    gap = abs(case.difficulty - model.theta)
    rng = np.random.default_rng(case_stream_seed(model.jitter_seed, case.id))
    grow = rng.random() < 0.5
    u = rng.random(case.truth.shape)
    out = case.truth.to_array().astype(bool)
    radius = int(round(radius_scale * gap))
    if radius > 0:
        if grow:
            out = ndimage.binary_dilation(out, structure=_disk(radius))
        else:
            out = ndimage.binary_erosion(out, structure=_disk(radius), border_value=0)
    if flips:
        out = out ^ (u < flip_base + flip_slope * gap)
    return BinaryMask.from_array(out)


def true_dice_eval(prediction: BinaryMask, case: SyntheticCase) -> float:
    return dice(prediction, case.truth)


_REF = re.compile(r"^theta=([0-9.eE+-]+),seed=(-?\d+)$")


class SyntheticBackend:
    """Segmenter backend over a synthetic dataset.

    Models are :class:`SyntheticModel` values; ``model_ref``/``load_model``
    convert them to and from strings such as ``"theta=0.31,seed=42"``.
    """

    name = "synthetic"

    def __init__(
        self,
        cases: Iterable[SyntheticCase],
        *,
        jitter: float = JITTER,
        flips: bool = True,
        flip_base: float = FLIP_BASE,
        flip_slope: float = FLIP_SLOPE,
        radius_scale: float = RADIUS_SCALE,
    ):
        self.cases = {c.id: c for c in cases}
        self.jitter = jitter
        self.predict_kw = dict(
            flips=flips, flip_base=flip_base, flip_slope=flip_slope, radius_scale=radius_scale
        )

    def train(self, case_ids: Sequence[str], seed: int) -> SyntheticModel:
        return synthetic_train([self.cases[c] for c in case_ids], seed, jitter=self.jitter)

    def predict(self, model: SyntheticModel, case_id: str) -> BinaryMask:
        return synthetic_predict(model, self.cases[case_id], **self.predict_kw)

    def model_ref(self, model: SyntheticModel) -> str:
        return f"theta={model.theta!r},seed={model.jitter_seed}"

    def load_model(self, ref: str) -> SyntheticModel:
        m = _REF.match(ref.strip())
        if not m:
            raise ValueError(f"malformed synthetic model reference {ref!r}")
        return SyntheticModel(theta=float(m.group(1)), jitter_seed=int(m.group(2)))

    def pool(self, seed: int = 0) -> Pool:
        cases = tuple(Case(id=c.id, difficulty=c.difficulty) for c in self.cases.values())
        return Pool(cases, seed=seed, truths={c.id: c.truth for c in self.cases.values()})


class FeasibilityError(RuntimeError):
    """The sampler could not produce a feasible matrix within the retry cap."""


@dataclass(frozen=True)
class SimulationConfig:
    t_values: tuple[int, ...]
    epsilon: float
    trials: int
    seed: int = 0
    method: str = "cap"

    def __post_init__(self):
        object.__setattr__(self, "t_values", tuple(int(t) for t in self.t_values))
        if not self.t_values or min(self.t_values) < 2:
            raise ValueError("every ensemble size t must be >= 2")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.method not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.method!r}; expected one of {SAMPLERS}")


@dataclass(frozen=True)
class SimulationRow:
    t: int
    epsilon: float
    mean_ratio: Optional[float]
    stdev_ratio: Optional[float]
    mean_abs_deviation: Optional[float]
    undefined_count: int

    @property
    def degenerate(self) -> bool:
        return self.mean_ratio is None


def _trios_ok(m: np.ndarray, tol: float = 1e-9) -> bool:
    t = m.shape[0]
    if t < 3:
        return True
    idx = np.array(list(itertools.combinations(range(t), 3)))
    a = m[idx[:, 0], idx[:, 1]]
    b = m[idx[:, 1], idx[:, 2]]
    c = m[idx[:, 2], idx[:, 0]]
    return bool(np.all(a * a + b * b + c * c - 1.0 <= 2.0 * a * b * c + tol))


def _psd_ok(m: np.ndarray, tol: float = 1e-8) -> bool:
    # Cholesky of the shifted matrix succeeds iff the smallest eigenvalue > -tol.
    try:
        np.linalg.cholesky(m + tol * np.eye(m.shape[0]))
    except np.linalg.LinAlgError:
        return False
    return True


def _mirror_upper(m: np.ndarray) -> np.ndarray:
    upper = np.triu(m, 1)
    out = upper + upper.T
    np.fill_diagonal(out, 1.0)
    return out


def _draw_uniform(t: int, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    return _mirror_upper(1.0 - rng.uniform(0.0, epsilon, (t, t)))


def _draw_cap(t: int, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    # Unit vectors within angle a/2 of a common pole, a = arccos(1 - epsilon):
    # pairwise angles stay <= a, so every cosine lies in [1 - epsilon, 1].
    half = np.arccos(1.0 - epsilon) / 2.0
    phi = rng.uniform(0.0, half, t)
    w = rng.standard_normal((t, t - 1))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    u = np.hstack([np.cos(phi)[:, None], np.sin(phi)[:, None] * w])
    return np.clip(_mirror_upper(u @ u.T), 1.0 - epsilon, 1.0)


SAMPLERS = ("cap", "uniform")


def sample_feasible_dice_matrix(
    t: int,
    epsilon: float,
    rng: np.random.Generator,
    method: str = "cap",
    max_retries: int = MAX_RETRIES,
) -> DiceMatrix:
    """Random feasible Dice matrix with off-diagonal entries in ``[1 - epsilon, 1]``.

    ``method="uniform"`` draws every off-diagonal as ``1 - delta`` with
    ``delta ~ U[0, epsilon]`` and rejects whole matrices that violate a trio
    constraint or are not PSD. Acceptance collapses beyond ``t`` of about 6
    (roughly 2% at t=6, none observed at t=8), so it is only usable for small
    ensembles.

    ``method="cap"`` takes the Gram matrix of random unit vectors in a
    spherical cap of angular diameter ``arccos(1 - epsilon)``. It is PSD by
    construction, scales to any ``t``, and keeps the same entry bounds.
    """
    if t < 2:
        raise ValueError(f"t must be >= 2, got {t}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if epsilon == 0.0:
        return DiceMatrix(np.ones((t, t)))
    try:
        draw = {"cap": _draw_cap, "uniform": _draw_uniform}[method]
    except KeyError:
        raise ValueError(f"unknown sampler {method!r}; expected one of {SAMPLERS}") from None
    for _ in range(max_retries):
        m = draw(t, epsilon, rng)
        if _trios_ok(m) and _psd_ok(m):
            return DiceMatrix(m)
    raise FeasibilityError(
        f"no feasible {t}x{t} matrix with epsilon={epsilon} after {max_retries} draws ({method} sampler)"
    )


def run_conjecture_simulation(config: SimulationConfig) -> list[SimulationRow]:
    """Mean and spread of the dominance ratio over sampled matrices, per ensemble size.

    Each trial uses its own derived seed, so results do not depend on trial
    order. Trials whose ratio is undefined are excluded and counted; a row
    where every trial is undefined has ``mean_ratio=None``.
    """
    rows = []
    for t in config.t_values:
        ratios = []
        undefined = 0
        for trial in range(config.trials):
            rng = np.random.default_rng(derive_seed(config.seed, "conjecture", t, trial))
            m = sample_feasible_dice_matrix(t, config.epsilon, rng, method=config.method)
            r = dominance_ratio(eigenvalues(m))
            if r is None:
                undefined += 1
            else:
                ratios.append(r)
        if ratios:
            arr = np.array(ratios)
            rows.append(
                SimulationRow(
                    t=t,
                    epsilon=config.epsilon,
                    mean_ratio=float(arr.mean()),
                    stdev_ratio=float(arr.std()),
                    mean_abs_deviation=float(np.abs(arr - 1.0).mean()),
                    undefined_count=undefined,
                )
            )
        else:
            rows.append(SimulationRow(t, config.epsilon, None, None, None, undefined))
    return rows
