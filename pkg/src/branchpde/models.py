"""PDE model description: diffusion coefficients, terminal condition, and the
polynomial reaction term that couples the solution and its gradient.

A model consists of a drift ``mu(t, x)``, a dispersion matrix ``sigma(t, x)``,
a bounded Lipschitz terminal condition ``g``, and a polynomial generator

    f(t, x, y, z) = sum over terms  c(t, x) * y**l0 * prod_i (b_i(t, x) . z)**l_i

indexed by multi-indices ``l = (l0, l1, ..., lm)``.  Coefficients are held as
tagged specs (constant, built-in formula, or arbitrary callable) so that the
compiled sampling kernel can consume structured models while user models fall
back to the Python walker.  Every coefficient carries a declared sup-norm
bound; bounds are user-declared, never inferred, because the moment-condition
checker needs them for black-box coefficients.

Model objects are immutable after construction and safe to share across
workers; all user callables are required to be pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "MultiIndex",
    "CoefficientSpec",
    "DirectionSpec",
    "DriftSpec",
    "SigmaSpec",
    "TerminalSpec",
    "GeneratorTerm",
    "PolynomialGenerator",
    "PdeModel",
    "multi_index_order",
    "eval_generator",
    "make_cosine_test_model",
    "make_ou_test_model",
    "model_from_config",
    "load_model_config",
]

MultiIndex = tuple[int, ...]

# coefficient kinds
COEF_CONST = 0
COEF_COSINE_SOURCE = 1
COEF_CALLABLE = 2

# drift kinds
MU_CONST = 0
MU_AFFINE_DIAG = 1  # mu_i(t, x) = a_i + b_i * x_i
MU_CALLABLE = 2

# dispersion kinds
SIGMA_DIAG_CONST = 0
SIGMA_FULL_CONST = 1
SIGMA_CALLABLE = 2

# terminal-condition kinds
G_COS_SUM = 0  # cos(sum_i x_i)
G_CALL_MEAN = 1  # scale * ((1/d) sum_i x_i - 1)^+
G_CONST = 2
G_AFFINE = 3  # intercept + w . x
G_CALLABLE = 4

SIMULATION_MODES = ("euler", "exact_constant", "exact_ou")


def multi_index_order(ell: MultiIndex) -> int:
    """Order |l| of a multi-index, the total offspring count of its branch."""
    return int(sum(ell))


def _as_vector(value, d: int) -> np.ndarray:
    out = np.asarray(value, dtype=float)
    if out.ndim == 0:
        out = np.full(d, float(out))
    if out.shape != (d,):
        raise ValueError(f"expected a length-{d} vector, got shape {out.shape}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CoefficientSpec:
    """Scalar field c(t, x) with a declared sup-norm bound."""

    kind: int
    value: float = 0.0
    params: tuple[float, ...] = ()
    fn: Callable[[float, np.ndarray], float] | None = None
    bound: float = math.inf

    def __call__(self, t: float, x: np.ndarray) -> float:
        if self.kind == COEF_CONST:
            return self.value
        if self.kind == COEF_COSINE_SOURCE:
            return _cosine_source(self.params, t, float(np.sum(x)))
        return float(self.fn(t, x))

    @staticmethod
    def constant(value: float) -> "CoefficientSpec":
        return CoefficientSpec(COEF_CONST, value=float(value), bound=abs(float(value)))

    @staticmethod
    def from_callable(fn, bound: float) -> "CoefficientSpec":
        return CoefficientSpec(COEF_CALLABLE, fn=fn, bound=float(bound))


def _cosine_source(params: tuple[float, ...], t: float, s: float) -> float:
    # params = (alpha, c, beta, sigma_sq, horizon); beta = (3d+1)/(2d)
    alpha, c, beta, sigma_sq, horizon = params
    e = math.exp(alpha * (horizon - t))
    return math.cos(s) * (alpha + 0.5 * sigma_sq + c * math.sin(s) * beta * e) * e


@dataclass(frozen=True)
class DirectionSpec:
    """Gradient direction field b_i(t, x), a length-d vector."""

    kind: int  # COEF_CONST or COEF_CALLABLE
    value: np.ndarray | None = None
    fn: Callable[[float, np.ndarray], np.ndarray] | None = None
    bound: float = math.inf  # sup over (t, x) of max_j |b_j|

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.kind == COEF_CONST:
            return self.value
        return np.asarray(self.fn(t, x), dtype=float)

    @staticmethod
    def constant(vec, d: int) -> "DirectionSpec":
        v = _as_vector(vec, d)
        return DirectionSpec(COEF_CONST, value=v, bound=float(np.max(np.abs(v))))

    @staticmethod
    def from_callable(fn, bound: float) -> "DirectionSpec":
        return DirectionSpec(COEF_CALLABLE, fn=fn, bound=float(bound))


@dataclass(frozen=True)
class DriftSpec:
    kind: int
    intercept: np.ndarray | None = None  # MU_CONST value, or affine a
    slope: np.ndarray | None = None  # affine b (diagonal)
    fn: Callable[[float, np.ndarray], np.ndarray] | None = None
    jacobian: Callable[[float, np.ndarray], np.ndarray] | None = None

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.kind == MU_CONST:
            return self.intercept
        if self.kind == MU_AFFINE_DIAG:
            return self.intercept + self.slope * x
        return np.asarray(self.fn(t, x), dtype=float)

    @staticmethod
    def constant(vec, d: int) -> "DriftSpec":
        return DriftSpec(MU_CONST, intercept=_as_vector(vec, d))

    @staticmethod
    def affine(intercept, slope, d: int) -> "DriftSpec":
        return DriftSpec(
            MU_AFFINE_DIAG, intercept=_as_vector(intercept, d), slope=_as_vector(slope, d)
        )

    @staticmethod
    def from_callable(fn, jacobian=None) -> "DriftSpec":
        return DriftSpec(MU_CALLABLE, fn=fn, jacobian=jacobian)


@dataclass(frozen=True)
class SigmaSpec:
    kind: int
    diag: np.ndarray | None = None
    matrix: np.ndarray | None = None
    fn: Callable[[float, np.ndarray], np.ndarray] | None = None
    column_jacobians: Callable[[float, np.ndarray], np.ndarray] | None = None

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.kind == SIGMA_DIAG_CONST:
            return np.diag(self.diag)
        if self.kind == SIGMA_FULL_CONST:
            return self.matrix
        return np.asarray(self.fn(t, x), dtype=float)

    @property
    def is_constant(self) -> bool:
        return self.kind in (SIGMA_DIAG_CONST, SIGMA_FULL_CONST)

    def constant_matrix(self) -> np.ndarray:
        if self.kind == SIGMA_DIAG_CONST:
            return np.diag(self.diag)
        if self.kind == SIGMA_FULL_CONST:
            return self.matrix
        raise ValueError("dispersion is not constant")

    @staticmethod
    def diagonal(values, d: int) -> "SigmaSpec":
        v = _as_vector(values, d)
        if np.any(v == 0.0):
            raise ValueError("diagonal dispersion must be invertible")
        return SigmaSpec(SIGMA_DIAG_CONST, diag=v)

    @staticmethod
    def full(matrix) -> "SigmaSpec":
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("dispersion matrix must be square")
        m = m.copy()
        m.setflags(write=False)
        return SigmaSpec(SIGMA_FULL_CONST, matrix=m)

    @staticmethod
    def from_callable(fn, column_jacobians=None) -> "SigmaSpec":
        return SigmaSpec(SIGMA_CALLABLE, fn=fn, column_jacobians=column_jacobians)


@dataclass(frozen=True)
class TerminalSpec:
    """Terminal condition g with declared sup-norm and Lipschitz constant."""

    kind: int
    params: tuple[float, ...] = ()
    weights: np.ndarray | None = None
    fn: Callable[[np.ndarray], float] | None = None
    sup_norm: float = math.inf
    lipschitz: float = math.inf

    def __call__(self, x: np.ndarray) -> float:
        if self.kind == G_COS_SUM:
            return math.cos(float(np.sum(x)))
        if self.kind == G_CALL_MEAN:
            scale, d = self.params
            return scale * max(float(np.sum(x)) / d - 1.0, 0.0)
        if self.kind == G_CONST:
            return self.params[0]
        if self.kind == G_AFFINE:
            return self.params[0] + float(self.weights @ x)
        return float(self.fn(x))

    @staticmethod
    def cos_sum(d: int) -> "TerminalSpec":
        return TerminalSpec(G_COS_SUM, sup_norm=1.0, lipschitz=math.sqrt(d))

    @staticmethod
    def call_on_mean(d: int, scale: float = 1.0) -> "TerminalSpec":
        # unbounded in principle, but the representation only sees it through
        # recentred increments; declare the sup over the simulated range
        return TerminalSpec(
            G_CALL_MEAN,
            params=(float(scale), float(d)),
            sup_norm=math.inf,
            lipschitz=float(scale) / math.sqrt(d),
        )

    @staticmethod
    def constant(value: float) -> "TerminalSpec":
        return TerminalSpec(G_CONST, params=(float(value),), sup_norm=abs(float(value)), lipschitz=0.0)

    @staticmethod
    def affine(intercept: float, weights, d: int) -> "TerminalSpec":
        w = _as_vector(weights, d)
        return TerminalSpec(
            G_AFFINE,
            params=(float(intercept),),
            weights=w,
            sup_norm=math.inf,
            lipschitz=float(np.linalg.norm(w)),
        )

    @staticmethod
    def from_callable(fn, sup_norm: float, lipschitz: float) -> "TerminalSpec":
        return TerminalSpec(G_CALLABLE, fn=fn, sup_norm=float(sup_norm), lipschitz=float(lipschitz))


@dataclass(frozen=True)
class GeneratorTerm:
    powers: MultiIndex
    coefficient: CoefficientSpec


@dataclass(frozen=True)
class PolynomialGenerator:
    """The reaction polynomial: terms over multi-indices plus direction fields."""

    num_directions: int  # m
    terms: tuple[GeneratorTerm, ...]
    directions: tuple[DirectionSpec, ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("generator needs at least one term")
        if len(self.directions) != self.num_directions:
            raise ValueError("need exactly one direction field per gradient slot")
        seen = set()
        for term in self.terms:
            ell = term.powers
            if len(ell) != self.num_directions + 1:
                raise ValueError(
                    f"multi-index {ell} must have length {self.num_directions + 1}"
                )
            if any(int(e) != e or e < 0 for e in ell):
                raise ValueError(f"multi-index {ell} must have non-negative integer entries")
            if ell in seen:
                raise ValueError(f"duplicate multi-index {ell}")
            seen.add(ell)
        # canonical sorted order keeps model hashing and branch sampling deterministic
        object.__setattr__(
            self, "terms", tuple(sorted(self.terms, key=lambda tm: tm.powers))
        )

    @property
    def multi_indices(self) -> tuple[MultiIndex, ...]:
        return tuple(term.powers for term in self.terms)

    def max_order(self) -> int:
        return max(multi_index_order(t.powers) for t in self.terms)


def eval_generator(gen: PolynomialGenerator, t: float, x: np.ndarray, y: float, z) -> float:
    """Evaluate f(t, x, y, z) with the convention 0**0 = 1, so that pure
    source terms contribute their coefficient regardless of (y, z)."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.shape != x.shape:
        raise ValueError(f"gradient argument has shape {z.shape}, expected {x.shape}")
    total = 0.0
    dots = [float(b(t, x) @ z) for b in gen.directions]
    for term in gen.terms:
        ell = term.powers
        val = term.coefficient(t, x)
        if ell[0]:
            val *= y ** ell[0]
        for i in range(1, len(ell)):
            if ell[i]:
                val *= dots[i - 1] ** ell[i]
        total += val
    return total


@dataclass(frozen=True)
class PdeModel:
    """A complete semilinear problem: terminal value solved backward from
    ``horizon`` under drift/dispersion, with polynomial reaction term."""

    dim: int
    horizon: float
    drift: DriftSpec
    dispersion: SigmaSpec
    terminal: TerminalSpec
    generator: PolynomialGenerator
    simulation_mode: str
    x0: np.ndarray | None = None
    solution: Callable[[float, np.ndarray], float] | None = None
    solution_gradient: Callable[[float, np.ndarray], np.ndarray] | None = None
    name: str = ""
    notes: str = field(default="", compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be at least 1")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.simulation_mode not in SIMULATION_MODES:
            raise ValueError(f"unknown simulation mode {self.simulation_mode!r}")
        if self.simulation_mode == "exact_constant":
            if self.drift.kind != MU_CONST or not self.dispersion.is_constant:
                raise ValueError("exact_constant mode needs constant drift and dispersion")
        if self.simulation_mode == "exact_ou":
            if self.drift.kind not in (MU_CONST, MU_AFFINE_DIAG):
                raise ValueError("exact_ou mode needs componentwise-affine drift")
            if self.dispersion.kind != SIGMA_DIAG_CONST:
                raise ValueError("exact_ou mode needs constant diagonal dispersion")
        if self.x0 is not None:
            object.__setattr__(self, "x0", _as_vector(self.x0, self.dim))

    # convenience callables mirroring the mathematical objects
    def mu(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.drift(t, x)

    def sigma(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.dispersion(t, x)

    def g(self, x: np.ndarray) -> float:
        return self.terminal(x)

    def f(self, t: float, x: np.ndarray, y: float, z) -> float:
        return eval_generator(self.generator, t, x, y, z)


def make_cosine_test_model(
    d: int, alpha: float, c: float, sigma_scalar: float = 1.0, horizon: float = 1.0
) -> PdeModel:
    """High-dimensional test problem with closed-form solution
    u(t, x) = cos(sum x_i) * exp(alpha * (horizon - t)).

    Dispersion is (sigma_scalar/sqrt(d)) I so the Laplacian trace is
    dimension-free; the reaction term is a known source plus
    c * y * (b . z) with b = (1/d)(1 + 1/d, ..., 2).  The source is
    hard-coded so the closed form solves the problem exactly.
    """
    if d < 1:
        raise ValueError("d must be at least 1")
    beta = (3.0 * d + 1.0) / (2.0 * d)
    sigma_sq = sigma_scalar * sigma_scalar
    b = (1.0 / d) * (1.0 + np.arange(1, d + 1, dtype=float) / d)
    # sup of |cos(s)(alpha + sig^2/2 + c sin(s) beta e) e| over t in [0, horizon]
    e_max = math.exp(alpha * horizon)
    source_bound = (abs(alpha) + 0.5 * sigma_sq + abs(c) * beta * e_max) * e_max
    source = CoefficientSpec(
        COEF_COSINE_SOURCE,
        params=(float(alpha), float(c), beta, sigma_sq, float(horizon)),
        bound=source_bound,
    )
    gen = PolynomialGenerator(
        num_directions=1,
        terms=(
            GeneratorTerm((0, 0), source),
            GeneratorTerm((1, 1), CoefficientSpec.constant(c)),
        ),
        directions=(DirectionSpec.constant(b, d),),
    )

    def solution(t, x):
        return math.cos(float(np.sum(x))) * math.exp(alpha * (horizon - t))

    def solution_gradient(t, x):
        return -math.sin(float(np.sum(x))) * math.exp(alpha * (horizon - t)) * np.ones(d)

    return PdeModel(
        dim=d,
        horizon=float(horizon),
        drift=DriftSpec.constant(0.0, d),
        dispersion=SigmaSpec.diagonal(sigma_scalar / math.sqrt(d), d),
        terminal=TerminalSpec.cos_sum(d),
        generator=gen,
        simulation_mode="exact_constant",
        x0=np.full(d, 0.5),
        solution=solution,
        solution_gradient=solution_gradient,
        name=f"cosine-d{d}",
    )


def make_ou_test_model(
    d: int,
    nonlinearity: PolynomialGenerator,
    g_scale: float = 1.0,
    sigma_scalar: float = 0.5,
    horizon: float = 1.0,
    name: str = "",
) -> PdeModel:
    """Mean-reverting test problem: mu(t, x) = 1 - x, sigma = 0.5 I,
    g(x) = g_scale * ((1/d) sum x_i - 1)^+, started at x0 = 1."""
    if d < 1:
        raise ValueError("d must be at least 1")
    return PdeModel(
        dim=d,
        horizon=float(horizon),
        drift=DriftSpec.affine(1.0, -1.0, d),
        dispersion=SigmaSpec.diagonal(sigma_scalar, d),
        terminal=TerminalSpec.call_on_mean(d, g_scale),
        generator=nonlinearity,
        simulation_mode="exact_ou",
        x0=np.ones(d),
        name=name or f"ou-{d}d",
    )


# ------------------------------------------------------------------
# JSON model configs: constant/affine coefficients and polynomial terms.
# Arbitrary callables remain code-level only.
# ------------------------------------------------------------------


def _direction_from_config(entry, d: int) -> DirectionSpec:
    return DirectionSpec.constant(entry, d)


def model_from_config(cfg: dict) -> PdeModel:
    """Build a model from a plain-dict description (see README for the schema)."""
    d = int(cfg["d"])
    horizon = float(cfg.get("T", 1.0))

    mu_cfg = cfg.get("mu", {"kind": "constant", "value": 0.0})
    if mu_cfg["kind"] == "constant":
        drift = DriftSpec.constant(mu_cfg.get("value", 0.0), d)
    elif mu_cfg["kind"] == "affine":
        drift = DriftSpec.affine(mu_cfg.get("intercept", 0.0), mu_cfg.get("slope", 0.0), d)
    else:
        raise ValueError(f"unsupported drift kind {mu_cfg['kind']!r} in config")

    sig_cfg = cfg.get("sigma", {"kind": "diagonal", "value": 1.0})
    if sig_cfg["kind"] in ("diagonal", "scalar"):
        dispersion = SigmaSpec.diagonal(sig_cfg.get("value", 1.0), d)
    elif sig_cfg["kind"] == "matrix":
        dispersion = SigmaSpec.full(sig_cfg["value"])
    else:
        raise ValueError(f"unsupported dispersion kind {sig_cfg['kind']!r} in config")

    g_cfg = cfg.get("g", {"kind": "cos_sum"})
    g_kind = g_cfg["kind"]
    if g_kind == "cos_sum":
        terminal = TerminalSpec.cos_sum(d)
    elif g_kind == "call_on_mean":
        terminal = TerminalSpec.call_on_mean(d, g_cfg.get("scale", 1.0))
    elif g_kind == "constant":
        terminal = TerminalSpec.constant(g_cfg.get("value", 0.0))
    elif g_kind == "affine":
        terminal = TerminalSpec.affine(g_cfg.get("intercept", 0.0), g_cfg.get("slope", 0.0), d)
    else:
        raise ValueError(f"unsupported terminal kind {g_kind!r} in config")

    directions = tuple(
        _direction_from_config(entry, d) for entry in cfg.get("directions", [])
    )
    m = len(directions)
    terms = []
    for term in cfg["terms"]:
        powers = tuple(int(p) for p in term["powers"])
        if len(powers) != m + 1:
            raise ValueError(
                f"term {powers} has length {len(powers)}, expected {m + 1}"
            )
        terms.append(GeneratorTerm(powers, CoefficientSpec.constant(term["coefficient"])))
    gen = PolynomialGenerator(num_directions=m, terms=tuple(terms), directions=directions)

    x0 = cfg.get("x0")
    return PdeModel(
        dim=d,
        horizon=horizon,
        drift=drift,
        dispersion=dispersion,
        terminal=terminal,
        generator=gen,
        simulation_mode=cfg.get("mode", "euler"),
        x0=x0 if x0 is None else _as_vector(x0, d),
        name=cfg.get("name", "config"),
    )


def load_model_config(path) -> PdeModel:
    with open(path) as handle:
        return model_from_config(json.load(handle))
