"""Markov kernel abstraction, small-set data, residual dynamics, split chain.

A small set C with minorisation P(x, .) >= eps nu(.) for x in C lets the
chain be split onto X x {0,1}: whenever the chain sits at x, a coin with
head probability eps 1_C(x) is tossed; on heads the next move is drawn
from nu (the chain regenerates), on tails from the residual kernel

    Q(x, .) = (1 - eps 1_C(x))^{-1} { P(x, .) - eps 1_C(x) nu(.) },

with Q(x, .) = delta_x when eps 1_C(x) = 1.  The coin-after-state order
used here reproduces the split kernel exactly while the marginal law of
the state component remains P.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

State = Any


class MinorisationError(ValueError):
    """The residual kernel has negative mass: P(x,.) >= eps nu(.) fails."""


@dataclass(frozen=True)
class SplitState:
    x: State
    d: int

    def __post_init__(self):
        if self.d not in (0, 1):
            raise ValueError(f"coin must be 0 or 1, got {self.d}")


class Kernel:
    """A transition kernel: a sampler plus optional exact structure.

    For finite state spaces (states 0..n-1) the exact row-stochastic
    matrix enables oracle computations and exact residual rows; for
    countable or continuous spaces only the sampler is required.
    """

    def __init__(
        self,
        sample: Callable[[State, np.random.Generator], State],
        matrix: np.ndarray | None = None,
        space: str = "finite",
        contains: Callable[[State], bool] | None = None,
    ):
        self.sample = sample
        self.matrix = None if matrix is None else np.asarray(matrix, dtype=float)
        self.space = space
        self._contains = contains
        self._cum = None if self.matrix is None else np.cumsum(self.matrix, axis=1)

    @classmethod
    def from_matrix(cls, P: np.ndarray) -> "Kernel":
        P = np.asarray(P, dtype=float)
        n = P.shape[0]
        if P.shape != (n, n):
            raise ValueError("transition matrix must be square")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("matrix rows must be non-negative and sum to 1 (1e-12)")
        cum = np.cumsum(P, axis=1)

        def sample(x: int, rng: np.random.Generator) -> int:
            return int(np.searchsorted(cum[x], rng.random(), side="right"))

        k = cls(sample, matrix=P, space="finite")
        return k

    def in_space(self, x: State) -> bool:
        if self.matrix is not None:
            return isinstance(x, (int, np.integer)) and 0 <= x < self.matrix.shape[0]
        if self._contains is not None:
            return self._contains(x)
        return True


class SmallSetSpec:
    """Small-set data (C, eps, nu) for the one-step minorisation.

    nu must be supported on C.  On finite spaces the componentwise
    minorisation P(x, .) >= eps nu(.) for x in C is verified exactly at
    construction time against the kernel it will be used with (see
    `verify_minorisation`); elsewhere verification is by sampling and the
    caller's certification is statistical.
    """

    def __init__(
        self,
        contains: Callable[[State], bool],
        epsilon: float,
        nu_sample: Callable[[np.random.Generator], State],
        nu_vector: np.ndarray | None = None,
        residual_sampler: Callable[[State, np.random.Generator], State] | None = None,
        nu_density: Callable[[State], float] | None = None,
    ):
        if not 0.0 < epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
        self.contains = contains
        self.epsilon = float(epsilon)
        self.nu_sample = nu_sample
        self.nu_vector = None if nu_vector is None else np.asarray(nu_vector, dtype=float)
        self.residual_sampler = residual_sampler
        self.nu_density = nu_density
        if self.nu_vector is not None:
            if abs(self.nu_vector.sum() - 1.0) > 1e-12:
                raise ValueError("nu must be a probability vector")

    @classmethod
    def finite(cls, C: "np.ndarray | list[int]", epsilon: float, nu: np.ndarray) -> "SmallSetSpec":
        C_idx = frozenset(int(i) for i in C)
        nu = np.asarray(nu, dtype=float)
        support = set(np.nonzero(nu > 0)[0].tolist())
        if not support <= C_idx:
            raise ValueError("nu(C) = 1 is required: nu puts mass outside C")
        cum = np.cumsum(nu)

        def nu_sample(rng: np.random.Generator) -> int:
            return int(np.searchsorted(cum, rng.random(), side="right"))

        spec = cls(lambda x: int(x) in C_idx, epsilon, nu_sample, nu_vector=nu)
        spec.C_indices = np.array(sorted(C_idx), dtype=int)
        return spec

    def verify_minorisation(self, kernel: Kernel) -> None:
        """Exact componentwise check on finite spaces; raises on failure."""
        if kernel.matrix is None or self.nu_vector is None:
            return
        for x in getattr(self, "C_indices", []):
            deficit = kernel.matrix[int(x)] - self.epsilon * self.nu_vector
            if deficit.min() < -1e-12:
                raise MinorisationError(
                    f"P({x},.) >= eps nu(.) fails by {-deficit.min():.3e}"
                )


@dataclass
class DriftSpec:
    """Drift data (V, phi, b) for PV <= V - phi(V) + b 1_C.

    V maps states to [1, oo) and must be bounded on C; rate is the
    concave phi.  For finite chains V_vector carries the exact values.
    """

    V: Callable[[State], float]
    rate: "object"  # RateSpec; typed loosely to avoid an import cycle
    b: float
    V_vector: np.ndarray | None = None

    def __post_init__(self):
        if self.b <= 0:
            raise ValueError("drift offset b must be positive")
        if self.V_vector is not None:
            self.V_vector = np.asarray(self.V_vector, dtype=float)
            if np.any(self.V_vector < 1.0 - 1e-12):
                raise ValueError("V must be >= 1 everywhere")

    @classmethod
    def from_vector(cls, V: np.ndarray, rate, b: float) -> "DriftSpec":
        V = np.asarray(V, dtype=float)
        return cls(lambda x: float(V[int(x)]), rate, b, V_vector=V)


class _FiniteResidualRows:
    """Lazily built exact residual rows for finite chains."""

    def __init__(self, kernel: Kernel, ss: SmallSetSpec):
        self._kernel = kernel
        self._ss = ss
        self._rows: dict[int, np.ndarray] = {}

    def cum_row(self, x: int) -> np.ndarray:
        row = self._rows.get(x)
        if row is None:
            P_row = self._kernel.matrix[x]
            q = (P_row - self._ss.epsilon * self._ss.nu_vector) / (1.0 - self._ss.epsilon)
            if q.min() < -1e-12:
                raise MinorisationError(f"negative residual mass at state {x}")
            q = np.clip(q, 0.0, None)
            q = q / q.sum()
            row = np.cumsum(q)
            self._rows[x] = row
        return row


def residual_matrix(P: np.ndarray, C: np.ndarray, epsilon: float, nu: np.ndarray) -> np.ndarray:
    """The full residual kernel Q as a matrix (finite spaces).

    Rows outside C are P's rows; rows in C are the renormalised residual,
    or the Dirac row when epsilon = 1.
    """
    P = np.asarray(P, dtype=float)
    Q = P.copy()
    for x in np.asarray(C, dtype=int):
        if epsilon >= 1.0:
            Q[x] = 0.0
            Q[x, x] = 1.0
        else:
            q = (P[x] - epsilon * np.asarray(nu, dtype=float)) / (1.0 - epsilon)
            if q.min() < -1e-12:
                raise MinorisationError(f"negative residual mass at state {x}")
            Q[x] = np.clip(q, 0.0, None)
            Q[x] /= Q[x].sum()
    return Q


def residual_sample(
    kernel: Kernel, ss: SmallSetSpec, x: State, rng: np.random.Generator
) -> State:
    """Draw from the residual kernel Q(x, .).

    Outside C this is P(x, .); inside C with eps < 1 the renormalised
    residual; inside C with eps = 1 the Dirac branch (which the split
    simulation never reaches, since the coin is then surely heads).
    """
    if not ss.contains(x):
        return kernel.sample(x, rng)
    if ss.epsilon >= 1.0:
        return x
    if ss.residual_sampler is not None:
        return ss.residual_sampler(x, rng)
    if kernel.matrix is not None and ss.nu_vector is not None:
        cache = getattr(ss, "_residual_rows", None)
        if cache is None or cache._kernel is not kernel:
            cache = _FiniteResidualRows(kernel, ss)
            ss._residual_rows = cache
        return int(np.searchsorted(cache.cum_row(int(x)), rng.random(), side="right"))
    raise NotImplementedError(
        "residual sampling on this space needs an explicit residual_sampler"
    )


def split_step(
    kernel: Kernel, ss: SmallSetSpec, s: SplitState, rng: np.random.Generator
) -> SplitState:
    """One transition of the split chain from (X_n, d_n) to (X_{n+1}, d_{n+1}).

    The state moves by nu when the current coin is heads and by the
    residual kernel otherwise; the new coin is heads with probability
    eps 1_C(X_{n+1}).  Marginally the state component moves by P.
    """
    if s.d == 1:
        x_next = ss.nu_sample(rng)
    else:
        x_next = residual_sample(kernel, ss, s.x, rng)
    d_next = _draw_coin(ss, x_next, rng)
    return SplitState(x_next, d_next)


def split_initial(
    mu_sample: Callable[[np.random.Generator], State] | State,
    ss: SmallSetSpec,
    rng: np.random.Generator,
) -> SplitState:
    """Draw (X_0, d_0) from the split measure of mu.

    `mu_sample` is either a sampler or a fixed state (point mass).
    """
    x = mu_sample(rng) if callable(mu_sample) else mu_sample
    return SplitState(x, _draw_coin(ss, x, rng))


def _draw_coin(ss: SmallSetSpec, x: State, rng: np.random.Generator) -> int:
    if not ss.contains(x):
        return 0
    if ss.epsilon >= 1.0:
        return 1
    return 1 if rng.random() < ss.epsilon else 0
