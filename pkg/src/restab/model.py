"""Core value types, validation and error classes shared across the package."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]

PREPROCESS_ATOL = 1e-10


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class RestabError(Exception):
    """Base class for all errors raised by this package."""


class NonFinite(RestabError):
    pass


class ShapeMismatch(RestabError):
    pass


class NotPreprocessed(RestabError):
    pass


class NonPositivePrecision(RestabError):
    pass


class NumericalBreakdown(RestabError):
    pass


class SingularMatrix(RestabError):
    pass


class DimensionGuard(RestabError):
    pass


class TooFewSamples(RestabError):
    pass


class DegenerateColumn(RestabError):
    pass


class BadShape(RestabError):
    pass


class ParseError(RestabError):
    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class RaggedRows(RestabError):
    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class NotConverged(RestabError):
    """Iteration budget exhausted; carries whatever partial results exist."""

    def __init__(self, message: str, trace: Any = None, state: Any = None, result: Any = None) -> None:
        super().__init__(message)
        self.trace = trace
        self.state = state
        self.result = result


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


def _frozen(a: Any) -> Array:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (M x N) and output vector (M,)."""

    features: Array
    outputs: Array
    preprocessed: bool = False
    provenance: str = "synthetic"

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", _frozen(self.features))
        object.__setattr__(self, "outputs", _frozen(self.outputs))

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]


def validate_dataset(d: Dataset, require_preprocessed: bool = False) -> None:
    """Raise on the first violated Dataset invariant."""
    A, y = d.features, d.outputs
    if A.ndim != 2 or y.ndim != 1:
        raise ShapeMismatch(f"features must be 2-D and outputs 1-D, got {A.shape} and {y.shape}")
    M, N = A.shape
    if y.shape[0] != M:
        raise ShapeMismatch(f"{M} feature rows but {y.shape[0]} outputs")
    if M < 2 or N < 1:
        raise ShapeMismatch(f"need M >= 2 and N >= 1, got M={M}, N={N}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
        raise NonFinite("dataset contains NaN or infinite entries")
    if d.preprocessed:
        col_mean = A.mean(axis=0)
        col_norm = np.linalg.norm(A, axis=0)
        if np.max(np.abs(col_mean)) > PREPROCESS_ATOL:
            raise NotPreprocessed("a feature column is not centered")
        if np.max(np.abs(col_norm - 1.0)) > PREPROCESS_ATOL:
            raise NotPreprocessed("a feature column does not have unit norm")
        if abs(y.mean()) > PREPROCESS_ATOL:
            raise NotPreprocessed("outputs are not centered")
    elif require_preprocessed:
        raise NotPreprocessed("dataset has not been centered and normalized")


# ---------------------------------------------------------------------------
# Resampling specifications
# ---------------------------------------------------------------------------

ORACLE_MODES = ("poisson", "multinomial", "none")


@dataclass(frozen=True)
class BootstrapSpec:
    """Occupation-number model for bootstrap resamples.

    ``tau`` is the Poisson mean M_B / M. ``oracle_mode`` selects how the naive
    oracle samples occupation vectors; ``"none"`` disables resampling (c = 1
    for every data point) on both the oracle and the message-passing side.
    """

    tau: float = 0.5
    tail_tol: float = 1e-15
    oracle_mode: str = "poisson"

    def __post_init__(self) -> None:
        if not (0.0 < self.tau <= 1.0):
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if not (0.0 < self.tail_tol <= 1e-6):
            raise ValueError(f"tail_tol must lie in (0, 1e-6], got {self.tail_tol}")
        if self.oracle_mode not in ORACLE_MODES:
            raise ValueError(f"oracle_mode must be one of {ORACLE_MODES}")

    @property
    def c_max(self) -> int:
        from restab.denoise_u import poisson_cmax

        return poisson_cmax(self.tau, self.tail_tol)


@dataclass(frozen=True)
class PenaltySpec:
    """Discrete distribution of the l1 strength: lambda = base * multiplier."""

    base: float
    atoms: tuple[tuple[float, float], ...] = ((1.0, 0.5), (2.0, 0.5))

    def __post_init__(self) -> None:
        atoms = tuple((float(m), float(w)) for m, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not self.base > 0:
            raise ValueError(f"base penalty must be positive, got {self.base}")
        if not atoms:
            raise ValueError("penalty needs at least one atom")
        if any(m <= 0 for m, _ in atoms):
            raise ValueError("penalty multipliers must be strictly positive")
        if any(w < 0 for _, w in atoms):
            raise ValueError("penalty weights must be nonnegative")
        if abs(sum(w for _, w in atoms) - 1.0) > 1e-12:
            raise ValueError("penalty weights must sum to 1")

    @classmethod
    def point_mass(cls, base: float) -> "PenaltySpec":
        return cls(base=base, atoms=((1.0, 1.0),))

    @property
    def lambdas(self) -> Array:
        return np.array([self.base * m for m, _ in self.atoms])

    @property
    def weights(self) -> Array:
        return np.array([w for _, w in self.atoms])


@dataclass(frozen=True)
class RvampConfig:
    delta_tol: float = 1e-12
    max_iter: int = 500
    damping: float = 0.8
    q_floor: float = 1e-12
    q_ceil: float = 1e14
    chi_hat_init: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.delta_tol > 0:
            raise ValueError("delta_tol must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be a positive integer")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")
        if not (0.0 < self.q_floor < self.q_ceil):
            raise ValueError("need 0 < q_floor < q_ceil")
        if not self.chi_hat_init >= 0:
            raise ValueError("chi_hat_init must be nonnegative")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")


# ---------------------------------------------------------------------------
# Message state
# ---------------------------------------------------------------------------

_X_FIELDS = ("r1x", "Qh1x", "chih1x", "r2x", "Qh2x", "chih2x",
             "xhat1", "v1x", "chi1x", "xhat2", "v2x", "chi2x")
_U_FIELDS = ("r1u", "Qh1u", "chih1u", "r2u", "Qh2u", "chih2u",
             "uhat1", "v1u", "chi1u", "uhat2", "v2u", "chi2u")


@dataclass
class MessageState:
    """All message parameters of the two-stage iteration, for the x block
    (length N) and the u block (length M), plus the moments each side
    computed most recently."""

    r1x: Array
    Qh1x: Array
    chih1x: Array
    r2x: Array
    Qh2x: Array
    chih2x: Array
    xhat1: Array
    v1x: Array
    chi1x: Array
    xhat2: Array
    v2x: Array
    chi2x: Array
    r1u: Array
    Qh1u: Array
    chih1u: Array
    r2u: Array
    Qh2u: Array
    chih2u: Array
    uhat1: Array
    v1u: Array
    chi1u: Array
    uhat2: Array
    v2u: Array
    chi2u: Array

    @classmethod
    def zeros(cls, n: int, m: int) -> "MessageState":
        kw = {k: np.zeros(n) for k in _X_FIELDS}
        kw.update({k: np.zeros(m) for k in _U_FIELDS})
        return cls(**kw)

    @property
    def n(self) -> int:
        return self.r1x.shape[0]

    @property
    def m(self) -> int:
        return self.r1u.shape[0]

    def copy(self) -> "MessageState":
        return dataclasses.replace(self, **{f.name: getattr(self, f.name).copy()
                                            for f in dataclasses.fields(self)})

    def check(self, q_floor: float, side2: bool = True) -> None:
        """Raise if any MessageState invariant is violated."""
        for name in _X_FIELDS + _U_FIELDS:
            a = getattr(self, name)
            expected = self.n if name in _X_FIELDS else self.m
            if a.shape != (expected,):
                raise ShapeMismatch(f"{name} has shape {a.shape}, expected ({expected},)")
            if not np.all(np.isfinite(a)):
                raise NonFinite(f"{name} has non-finite entries")
        qs = ("Qh1x", "Qh1u") + (("Qh2x", "Qh2u") if side2 else ())
        for name in qs:
            if np.min(getattr(self, name)) < q_floor:
                raise NumericalBreakdown(f"{name} below q_floor")
        for name in ("chih1x", "chih1u", "chih2x", "chih2u", "v1x", "v1u", "v2x", "v2u"):
            if np.min(getattr(self, name)) < 0:
                raise NumericalBreakdown(f"{name} has negative entries")


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass
class ResamplingStatistics:
    mean: Array
    variance: Array
    pi: Array
    method: str
    mc_std_err: Optional[dict[str, Array]] = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.method not in ("rvamp", "naive"):
            raise ValueError(f"unknown method {self.method!r}")
        n = self.mean.shape[0]
        if self.variance.shape != (n,) or self.pi.shape != (n,):
            raise ShapeMismatch("mean, variance and pi must share length N")

    @property
    def n(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class TraceRecord:
    t: int
    delta: float
    elapsed: float


@dataclass
class ConvergenceTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, t: int, delta: float, elapsed: float) -> None:
        if self.records and t <= self.records[-1].t:
            raise ValueError("iteration indices must increase")
        if not (np.isfinite(delta) and delta >= 0):
            raise NumericalBreakdown(f"invalid convergence measure {delta} at t={t}")
        self.records.append(TraceRecord(int(t), float(delta), float(elapsed)))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def deltas(self) -> Array:
        return np.array([r.delta for r in self.records])

    @property
    def iterations(self) -> NDArray[np.int64]:
        return np.array([r.t for r in self.records], dtype=np.int64)
