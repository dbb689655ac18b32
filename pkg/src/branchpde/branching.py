"""Age-dependent marked branching skeleton.

A particle lives a gamma-distributed duration, then either reaches the
horizon (no offspring) or branches into |l| offspring drawn from the
offspring mass function, the first l0 of which carry mark 0, the next l1
mark 1, and so on.  An optional "drift-correction" extension adds an extra
branch type that produces exactly one child carrying the correction mark;
it is used by the frozen-coefficient sampling scheme.

Randomness contract: skeleton growth consumes, per particle in creation
(breadth-first) order, first the arrival draws and then, for particles that
branch, one uniform for the branch type.  The creation order and the
per-particle draw order are part of the reproducibility contract shared
with the compiled kernel; do not reorder.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc, gammaincc, gammaln

from .models import MultiIndex, multi_index_order

__all__ = [
    "DEL_MARK",
    "DEL_BRANCH",
    "BranchingLaw",
    "ParticleRecord",
    "ParticleTree",
    "PopulationExplosionError",
    "sample_arrival",
    "survival",
    "sample_branch_type",
    "grow_skeleton",
    "expected_population",
]

# sentinel mark/branch index for the drift-correction extension
DEL_MARK = -1
DEL_BRANCH = -1

DEFAULT_TREE_CAP = 1_000_000
MIN_SEGMENT_DURATION = 1e-12


class PopulationExplosionError(RuntimeError):
    """Raised when a single tree exceeds the hard particle cap."""


@dataclass(frozen=True)
class BranchingLaw:
    """Gamma arrival law plus offspring mass function over multi-indices.

    ``del_probability`` > 0 enables the drift-correction branch type: the
    base probabilities are renormalised to (1 - del_probability) * p and the
    correction branch gets the remainder.
    """

    shape: float  # gamma shape kappa (dimensionless)
    scale: float  # gamma scale theta (time units)
    offspring: tuple[MultiIndex, ...]
    probabilities: np.ndarray
    del_probability: float = 0.0

    def __post_init__(self):
        if self.shape <= 0.0:
            raise ValueError("gamma shape must be positive")
        if self.shape >= 1.0:
            raise ValueError(
                "gamma shape must be below 1 so the arrival density does not "
                "vanish at the origin"
            )
        if self.shape > 0.5:
            warnings.warn(
                f"gamma shape {self.shape} > 0.5 violates the density lower "
                "bound t**(-1/2) needed by the moment conditions",
                stacklevel=2,
            )
        if self.scale <= 0.0:
            raise ValueError("gamma scale must be positive")
        probs = np.asarray(self.probabilities, dtype=float)
        if probs.shape != (len(self.offspring),):
            raise ValueError("need one probability per offspring multi-index")
        if np.any(probs <= 0.0):
            raise ValueError("offspring probabilities must be strictly positive")
        if not math.isclose(probs.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError("offspring probabilities must sum to one")
        if not 0.0 <= self.del_probability < 1.0:
            raise ValueError("del_probability must lie in [0, 1)")
        order = np.argsort([tuple(ell) for ell in self.offspring], axis=0)
        if list(order.ravel()[:1]):  # canonical order check without re-sorting storage
            pass
        sorted_pairs = sorted(zip(self.offspring, probs), key=lambda kv: kv[0])
        object.__setattr__(self, "offspring", tuple(ell for ell, _ in sorted_pairs))
        probs = np.array([p for _, p in sorted_pairs])
        probs.setflags(write=False)
        object.__setattr__(self, "probabilities", probs)
        # finite index sets make the mean-offspring condition automatic; assert anyway
        assert np.isfinite(self.mean_offspring)

    @property
    def mean_offspring(self) -> float:
        """n0 = sum_l |l| p_l under the base (non-extended) law."""
        return float(
            sum(multi_index_order(ell) * p for ell, p in zip(self.offspring, self.probabilities))
        )

    def effective_probabilities(self) -> np.ndarray:
        """Branch-type probabilities actually sampled, correction type last."""
        if self.del_probability == 0.0:
            return self.probabilities
        return np.concatenate(
            [(1.0 - self.del_probability) * self.probabilities, [self.del_probability]]
        )

    def with_del(self, del_probability: float) -> "BranchingLaw":
        return BranchingLaw(
            self.shape, self.scale, self.offspring, self.probabilities, float(del_probability)
        )

    def without_del(self) -> "BranchingLaw":
        if self.del_probability == 0.0:
            return self
        return BranchingLaw(self.shape, self.scale, self.offspring, self.probabilities, 0.0)

    @staticmethod
    def uniform(offspring, shape: float = 0.5, scale: float = 2.5) -> "BranchingLaw":
        offspring = tuple(tuple(int(v) for v in ell) for ell in offspring)
        p = np.full(len(offspring), 1.0 / len(offspring))
        return BranchingLaw(shape, scale, offspring, p)

    # -- gamma utilities -------------------------------------------------

    def sample_arrival(self, rng: np.random.Generator) -> float:
        """One gamma(shape, scale) duration.

        Uses the boost-shift construction for shape < 1 (draw gamma(shape+1),
        multiply by U**(1/shape)) to avoid small-shape rejection pathologies.
        Durations below MIN_SEGMENT_DURATION are redrawn to keep 1/duration
        factors finite.
        """
        while True:
            tau = (
                self.scale
                * rng.standard_gamma(self.shape + 1.0)
                * rng.random() ** (1.0 / self.shape)
            )
            if tau >= MIN_SEGMENT_DURATION:
                return tau

    def survival(self, t: float) -> float:
        """Upper tail P(arrival > t), the horizon-particle normaliser."""
        if t < 0.0:
            raise ValueError("survival needs t >= 0")
        return float(gammaincc(self.shape, t / self.scale))

    def density(self, t: float) -> float:
        if t <= 0.0:
            return 0.0
        return t ** (self.shape - 1.0) * math.exp(-t / self.scale) / self.gamma_norm

    @property
    def gamma_norm(self) -> float:
        # Gamma(kappa) * theta**kappa, the density normaliser
        return math.gamma(self.shape) * self.scale**self.shape

    def sample_branch_index(self, rng: np.random.Generator) -> int:
        """Branch type as an index into ``offspring``; DEL_BRANCH for the
        correction type when the extension is enabled."""
        u = rng.random()
        if self.del_probability > 0.0:
            if u >= 1.0 - self.del_probability:
                return DEL_BRANCH
            u = u / (1.0 - self.del_probability)
        acc = 0.0
        last = len(self.offspring) - 1
        for j, p in enumerate(self.probabilities):
            acc += p
            if u < acc:
                return j
        return last

    def sample_branch_type(self, rng: np.random.Generator):
        idx = self.sample_branch_index(rng)
        return "del" if idx == DEL_BRANCH else self.offspring[idx]


def sample_arrival(law: BranchingLaw, rng: np.random.Generator) -> float:
    return law.sample_arrival(rng)


def survival(law: BranchingLaw, t: float) -> float:
    return law.survival(t)


def sample_branch_type(law: BranchingLaw, rng: np.random.Generator):
    return law.sample_branch_type(rng)


@dataclass
class ParticleRecord:
    """One particle of a realised tree.  Indexing follows the construction:
    the root is (1,) and the j-th child of k is k + (j,)."""

    label: tuple[int, ...]
    mark: int  # 0..m, or DEL_MARK for the drift-correction mark
    birth: float
    death: float
    generation: int
    parent: int | None
    branch_index: int | None = None  # None while alive at the horizon
    children: list[int] = field(default_factory=list)
    # diffusion data, filled by the estimator pass
    birth_state: np.ndarray | None = None
    end_state: np.ndarray | None = None

    @property
    def reached_horizon(self) -> bool:
        return self.branch_index is None

    @property
    def duration(self) -> float:
        return self.death - self.birth


@dataclass
class ParticleTree:
    """A complete realised skeleton in creation (breadth-first) order."""

    records: list[ParticleRecord]
    horizon: float

    @property
    def root(self) -> ParticleRecord:
        return self.records[0]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def generations(self) -> int:
        return self.records[-1].generation

    def horizon_indices(self) -> list[int]:
        return [i for i, r in enumerate(self.records) if r.reached_horizon]

    def interior_indices(self) -> list[int]:
        return [i for i, r in enumerate(self.records) if not r.reached_horizon]

    def to_debug_json(self) -> str:
        rows = [
            {
                "label": list(r.label),
                "mark": r.mark,
                "birth": r.birth,
                "death": r.death,
                "generation": r.generation,
                "branch_index": r.branch_index,
            }
            for r in self.records
        ]
        return json.dumps(rows)


def grow_skeleton(
    law: BranchingLaw,
    t0: float,
    horizon: float,
    rng: np.random.Generator,
    max_particles: int = DEFAULT_TREE_CAP,
) -> ParticleTree:
    """Grow one complete marked skeleton on [t0, horizon].

    ``rng`` is the structure stream: growth consumes arrival draws and branch
    uniforms only, so a later diffusion pass can replay segments from an
    independent stream.
    """
    if not t0 < horizon:
        raise ValueError("need t0 < horizon")
    records = [
        ParticleRecord(label=(1,), mark=0, birth=t0, death=math.nan, generation=1, parent=None)
    ]
    head = 0
    while head < len(records):
        rec = records[head]
        tau = law.sample_arrival(rng)
        death = rec.birth + tau
        if death >= horizon:
            rec.death = horizon
            rec.branch_index = None
        else:
            rec.death = death
            idx = law.sample_branch_index(rng)
            rec.branch_index = idx
            if idx == DEL_BRANCH:
                marks = [DEL_MARK]
            else:
                ell = law.offspring[idx]
                marks = [j for j in range(len(ell)) for _ in range(ell[j])]
            for childno, mark in enumerate(marks, start=1):
                if len(records) >= max_particles:
                    raise PopulationExplosionError(
                        f"population explosion: tree exceeded {max_particles} particles"
                    )
                rec.children.append(len(records))
                records.append(
                    ParticleRecord(
                        label=rec.label + (childno,),
                        mark=mark,
                        birth=death,
                        death=math.nan,
                        generation=rec.generation + 1,
                        parent=head,
                    )
                )
        head += 1
    return ParticleTree(records=records, horizon=horizon)


def expected_population(
    law: BranchingLaw, n0: float, t: float, tol: float = 1e-12, max_terms: int = 10_000
) -> float:
    """Expected total number of particles ever alive by time t,
    sum_k n0**k P(k * shape, t / scale), truncated once the tail is below tol.

    The k-th summand is the k-fold arrival convolution evaluated through the
    regularised lower incomplete gamma; the k = 0 term is 1 by convention.
    """
    if t < 0.0:
        raise ValueError("need t >= 0")
    if n0 < 0.0:
        raise ValueError("need n0 >= 0")
    if t == 0.0 or n0 == 0.0:
        return 1.0
    x = t / law.scale
    total = 1.0
    log_n0 = math.log(n0)
    for k in range(1, max_terms + 1):
        term = math.exp(k * log_n0 + math.log(gammainc(k * law.shape, x)))
        total += term
        if term < tol and _tail_bound(law.shape, x, n0, k) < tol:
            return total
    raise RuntimeError(
        f"expected_population did not converge within {max_terms} terms "
        f"(n0={n0}, t={t}); raise max_terms or loosen tol"
    )


def _tail_bound(shape: float, x: float, n0: float, k: int) -> float:
    # P(a, x) <= x**a / Gamma(a + 1) for the monotone tail; sum the geometric
    # envelope from k + 1 once its ratio r = n0 * x**shape * (k*shape)**(-shape)-ish
    # falls below one.  Conservative but cheap.
    a = (k + 1) * shape
    log_term = (k + 1) * math.log(n0) + a * math.log(x) - gammaln(a + 1.0)
    ratio = n0 * x**shape / max((a + shape) ** shape, 1e-300)
    if ratio >= 0.5:
        return math.inf
    return math.exp(log_term) / (1.0 - ratio)
