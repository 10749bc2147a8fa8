"""Exact (non-simulation) computation on finite chains.

Everything the split-chain estimators measure by Monte Carlo is computed
here by linear algebra on small transition matrices: stationary
distributions (GTH elimination), modulated hitting moments via
horizon-truncated taboo power sums, split-chain regeneration moments via
a dynamic program over (state, visit count, time), and exhaustive path
enumeration for the exact regeneration identities.  These values are the
independent ground truth the rest of the package is tested against.

Finite chains serialise to a JSON document with keys
P / C / epsilon / nu / V / phi / b, shared with the model zoo exports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .chain import MinorisationError, residual_matrix
from .rates import RateSpec, SeqSpec

__all__ = [
    "FiniteChain",
    "MomentResult",
    "SplitMomentResult",
    "exact_stationary",
    "exact_hitting_moment",
    "exact_split_moment",
    "exact_regen_time_functional",
    "split_kernel_matrix",
    "enumerate_paths",
    "PathEnumeration",
]


class OracleError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# finite chain fixture
# ---------------------------------------------------------------------------


@dataclass
class FiniteChain:
    """A finite-state chain with small-set and (optional) drift data.

    States are 0..n-1.  Validation checks row-stochasticity to 1e-12,
    nu(C) = 1, the componentwise minorisation on C, irreducibility and
    aperiodicity.
    """

    P: np.ndarray
    C: np.ndarray
    epsilon: float
    nu: np.ndarray
    V: np.ndarray | None = None
    rate: RateSpec | None = None
    b: float | None = None
    name: str = ""
    _Q: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.C = np.asarray(self.C, dtype=int)
        self.nu = np.asarray(self.nu, dtype=float)
        if self.V is not None:
            self.V = np.asarray(self.V, dtype=float)
        self.validate()

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def in_C(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[self.C] = True
        return mask

    def validate(self) -> None:
        n = self.n
        if self.P.shape != (n, n):
            raise ValueError("P must be square")
        if n > 1000:
            raise ValueError("finite oracle chains are capped at 1000 states")
        if np.any(self.P < 0) or np.any(np.abs(self.P.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("rows must be stochastic to 1e-12")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")
        if abs(self.nu.sum() - 1.0) > 1e-12 or np.any(self.nu < 0):
            raise ValueError("nu must be a probability vector")
        _check_irreducible_aperiodic(self.P)
        mask = self.in_C
        if np.any(self.nu[~mask] > 0):
            raise ValueError("nu(C) = 1 fails: nu has mass outside C")
        for x in self.C:
            deficit = self.P[x] - self.epsilon * self.nu
            if deficit.min() < -1e-12:
                raise MinorisationError(
                    f"minorisation fails at state {x} by {-deficit.min():.3e}"
                )
        if self.V is not None and np.any(self.V < 1.0 - 1e-12):
            raise ValueError("V must be >= 1")

    @property
    def Q(self) -> np.ndarray:
        """Residual-kernel matrix (P outside C, renormalised residual on C)."""
        if self._Q is None:
            self._Q = residual_matrix(self.P, self.C, self.epsilon, self.nu)
        return self._Q

    def kernel_matrix(self, which: str) -> np.ndarray:
        if which == "P":
            return self.P
        if which == "Q":
            return self.Q
        raise ValueError(f"kernel must be 'P' or 'Q', got {which!r}")

    # -- JSON ---------------------------------------------------------------

    def to_json(self) -> dict:
        doc = {
            "P": self.P.tolist(),
            "C": self.C.tolist(),
            "epsilon": self.epsilon,
            "nu": self.nu.tolist(),
        }
        if self.V is not None:
            doc["V"] = self.V.tolist()
        if self.rate is not None:
            if self.rate.family == "custom":
                raise ValueError("custom rate functions do not serialise")
            doc["phi"] = {"family": self.rate.family, **self.rate.params}
        if self.b is not None:
            doc["b"] = self.b
        if self.name:
            doc["name"] = self.name
        return doc

    @classmethod
    def from_json(cls, doc: dict | str | Path) -> "FiniteChain":
        if isinstance(doc, (str, Path)):
            with open(doc) as fh:
                doc = json.load(fh)
        rate = None
        if "phi" in doc:
            spec = dict(doc["phi"])
            family = spec.pop("family")
            if family == "polynomial":
                rate = RateSpec.polynomial(**spec)
            elif family == "log_perturbed":
                rate = RateSpec.log_perturbed(**spec)
            else:
                raise ValueError(f"unknown rate family {family!r}")
        return cls(
            P=np.array(doc["P"], dtype=float),
            C=np.array(doc["C"], dtype=int),
            epsilon=float(doc["epsilon"]),
            nu=np.array(doc["nu"], dtype=float),
            V=np.array(doc["V"], dtype=float) if "V" in doc else None,
            rate=rate,
            b=float(doc["b"]) if "b" in doc else None,
            name=doc.get("name", ""),
        )


def _check_irreducible_aperiodic(P: np.ndarray) -> None:
    n = P.shape[0]
    adj = [np.nonzero(P[i] > 1e-15)[0] for i in range(n)]
    radj = [[] for _ in range(n)]
    for i in range(n):
        for j in adj[i]:
            radj[j].append(i)

    def bfs(start, nbrs):
        seen = np.zeros(n, dtype=bool)
        seen[start] = True
        frontier = [start]
        while frontier:
            nxt = []
            for u in frontier:
                for v in nbrs[u]:
                    if not seen[v]:
                        seen[v] = True
                        nxt.append(v)
            frontier = nxt
        return seen

    if not bfs(0, adj).all() or not bfs(0, radj).all():
        raise ValueError("chain is not irreducible")
    # period = gcd over edges of dist[u] + 1 - dist[v] (BFS distances)
    dist = np.full(n, -1)
    dist[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    g = 0
    for u in range(n):
        for v in adj[u]:
            g = math.gcd(g, int(dist[u] + 1 - dist[v]))
    if g != 1:
        raise ValueError(f"chain is periodic with period {g}")


# ---------------------------------------------------------------------------
# stationary distribution
# ---------------------------------------------------------------------------


def exact_stationary(chain: FiniteChain | np.ndarray) -> np.ndarray:
    """Stationary distribution by GTH elimination (no subtractions).

    Residual ||pi P - pi||_1 is checked below 1e-12.
    """
    P = chain.P if isinstance(chain, FiniteChain) else np.asarray(chain, dtype=float)
    A = P.astype(float).copy()
    n = A.shape[0]
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        if s <= 0.0:
            raise OracleError("GTH elimination hit a zero pivot (reducible chain?)")
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ A[:k, k]
    pi /= pi.sum()
    resid = np.abs(pi @ P - pi).sum()
    if resid > 1e-12:
        raise OracleError(f"stationary residual {resid:.2e} exceeds 1e-12")
    return pi


# ---------------------------------------------------------------------------
# modulated hitting moments (taboo power sums)
# ---------------------------------------------------------------------------


@dataclass
class MomentResult:
    value: float
    remainder: float
    horizon: int

    def __float__(self) -> float:
        return self.value


def _tail_sum(seq: SeqSpec, k0: int, rho: float, guard: int = 10**6) -> float:
    """sum_{j>=1} r(k0 + j) rho^j, summed until numerically exhausted."""
    if rho <= 0.0:
        return 0.0
    if rho >= 1.0:
        return math.inf
    total = 0.0
    p = 1.0
    stall = 0
    for j in range(1, guard):
        p *= rho
        term = seq(k0 + j) * p
        total += term
        if term <= 1e-18 * max(total, 1.0):
            stall += 1
            if stall >= 32:
                return total
        else:
            stall = 0
    return math.inf


def exact_hitting_moment(
    chain: FiniteChain,
    seq: SeqSpec,
    g: np.ndarray,
    x: int,
    kernel: str = "P",
    convention: str = "w",
    tol: float = 1e-10,
    max_horizon: int = 2 * 10**6,
) -> MomentResult:
    """Modulated moment of the hitting/return time to C, computed exactly.

    conventions (tau = first return >= 1, sigma = first hit >= 0):

    - "w":          E_x[ sum_{k=1}^{tau}   r(k) g(X_k) ]   (the W_{r,g} form)
    - "pre_return": E_x[ sum_{k=0}^{tau-1} r(k) g(X_k) ]
    - "hitting":    E_x[ sum_{k=0}^{sigma} r(k) g(X_k) ]

    kernel selects the dynamics: "P" for the chain itself, "Q" for the
    residual dynamics.  The sum is a taboo-kernel power sum truncated
    once the certified remainder (surviving mass times a geometric
    r-weighted tail) drops below tol relative to the value.
    """
    g = np.asarray(g, dtype=float)
    if np.any(g < 0):
        raise ValueError("modulated moments require non-negative g")
    if convention not in ("w", "pre_return", "hitting"):
        raise ValueError(f"unknown convention {convention!r}")
    K = chain.kernel_matrix(kernel)
    mask_out = ~chain.in_C
    max_g = float(g.max())

    value = 0.0
    if convention in ("pre_return", "hitting"):
        value += seq(0) * g[x]
        if convention == "hitting" and chain.in_C[x]:
            return MomentResult(value, 0.0, 0)

    u = K[x].copy()
    ratios: list[float] = []
    prev_mass = 1.0
    horizon = 0
    for k in range(1, max_horizon + 1):
        horizon = k
        if convention == "pre_return":
            value += seq(k) * float((u * g)[mask_out].sum())
        else:
            value += seq(k) * float(u @ g)
        w = u * mask_out
        mass = float(w.sum())
        if mass <= 0.0:
            return MomentResult(value, 0.0, horizon)
        ratios.append(mass / prev_mass)
        prev_mass = mass
        if len(ratios) >= 8:
            rho = max(ratios[-8:])
            if rho < 1.0:
                rem = max_g * mass * _tail_sum(seq, k, rho)
                if rem <= tol * max(1.0, abs(value)):
                    return MomentResult(value, rem, horizon)
        u = w @ K
    raise OracleError(
        f"taboo power sum did not converge within {max_horizon} steps "
        f"(surviving mass {prev_mass:.3e})"
    )


# ---------------------------------------------------------------------------
# split-chain regeneration moments
# ---------------------------------------------------------------------------


@dataclass
class SplitMomentResult:
    value: float
    remainder_j: float
    remainder_time: float
    j_max: int
    horizon: int
    partial_by_j: np.ndarray | None = None

    def __float__(self) -> float:
        return self.value


def exact_split_moment(
    chain: FiniteChain,
    seq: SeqSpec,
    g: np.ndarray,
    x: int | str,
    j_max: int | None = None,
    tol: float = 1e-10,
    max_horizon: int = 2 * 10**6,
) -> SplitMomentResult:
    """E over the split chain from delta_x of sum_{k=0}^{sigma_check} r(k) g(X_k).

    x may also be "nu" for a chain started from the split of nu.

    Evaluated through the regeneration series

        eps * sum_{j>=0} (1-eps)^j E~_x[ xi_{sigma_j} ],

    as a dynamic program over (state, visit count j, time) under the
    residual dynamics.  The j-series is truncated at j_max (chosen so the
    geometric factor is below the tolerance share) with a log-linear
    extrapolation remainder, and time is truncated once the
    (1-eps)^j-weighted surviving mass, with its modulated tail, is
    negligible.
    """
    g = np.asarray(g, dtype=float)
    if np.any(g < 0):
        raise ValueError("modulated moments require non-negative g")
    eps = chain.epsilon
    n = chain.n
    in_c = chain.in_C.astype(float)
    out_c = 1.0 - in_c
    max_g = float(g.max())

    if eps >= 1.0:
        j_max = 0
    if j_max is None:
        j_max = int(math.ceil(math.log(max(tol, 1e-300) * 1e-2) / math.log(1.0 - eps)))
        j_max = min(max(j_max, 8), 300)

    Q = chain.Q
    QT = Q.T.copy()
    use_sparse = n > 64 and np.count_nonzero(Q) < 0.2 * n * n
    if use_sparse:
        QT = sp.csr_matrix(QT)

    geom = eps * (1.0 - eps) ** np.arange(j_max + 1) if eps < 1.0 else np.array([1.0])
    M = np.zeros((n, j_max + 1))
    if isinstance(x, str):
        if x != "nu":
            raise ValueError(f"start must be a state index or 'nu', got {x!r}")
        M[:, 0] = chain.nu
    else:
        M[int(x), 0] = 1.0
    A = np.zeros(j_max + 1)
    aw_ratios: list[float] = []
    prev_aw = None
    horizon = 0
    for k in range(max_horizon + 1):
        horizon = k
        col = g @ M  # (j_max+1,)
        A += seq(k) * np.cumsum(col)
        aw = float(geom @ M.sum(axis=0))
        if aw <= 0.0:
            break
        if prev_aw is not None and prev_aw > 0:
            aw_ratios.append(aw / prev_aw)
        prev_aw = aw
        if len(aw_ratios) >= 8:
            rho = max(aw_ratios[-8:])
            if rho < 1.0:
                rem_t = max_g * aw * _tail_sum(seq, k, rho)
                if rem_t <= tol * 1e-2 * max(1.0, float(geom @ A)):
                    break
        shifted = M * in_c[:, None]
        M2 = M * out_c[:, None]
        M2[:, 1:] += shifted[:, :-1]
        M = QT @ M2 if not use_sparse else np.asarray(QT @ M2)
    else:
        raise OracleError(f"split-moment DP did not converge within {max_horizon} steps")

    value = float(geom @ A)
    rem_t = 0.0 if prev_aw is None or prev_aw <= 0 else max_g * prev_aw
    # j-truncation remainder by log-linear extrapolation of A_j
    rem_j = 0.0
    if eps < 1.0 and j_max >= 2 and A[j_max - 1] > 0:
        growth = A[j_max] / A[j_max - 1]
        q = (1.0 - eps) * growth
        if q < 1.0:
            rem_j = eps * (1.0 - eps) ** (j_max + 1) * A[j_max] * growth / (1.0 - q)
        else:
            rem_j = math.inf
    return SplitMomentResult(value, rem_j, rem_t, j_max, horizon, A.copy())


def exact_regen_time_functional(
    chain: FiniteChain,
    fn: Callable[[int], float],
    start: int | str = "nu",
    tol: float = 1e-12,
    max_horizon: int = 2 * 10**6,
) -> MomentResult:
    """E over the split chain of fn(sigma_check), e.g. r(sigma_check).

    start is a state index (split point mass delta-check_x) or "nu".
    Uses the exact law P(sigma_check = k) from the survival recursion
    beta_{k+1} = (beta_k . (1 - eps 1_C)) Q.
    """
    eps = chain.epsilon
    in_c = chain.in_C.astype(float)
    beta = chain.nu.copy() if start == "nu" else _unit(chain.n, int(start))
    Q = chain.Q
    fseq = SeqSpec(lambda j: abs(fn(j)), in_lambda0=False)
    value = 0.0
    ratios: list[float] = []
    prev_mass = 1.0
    for k in range(max_horizon + 1):
        p_k = float(beta @ (eps * in_c))
        value += fn(k) * p_k
        survivors = beta * (1.0 - eps * in_c)
        mass = float(survivors.sum())
        if mass <= 0.0:
            return MomentResult(value, 0.0, k)
        ratios.append(mass / prev_mass)
        prev_mass = mass
        if len(ratios) >= 8:
            rho = max(ratios[-8:])
            if rho < 1.0:
                rem = mass * _tail_sum(fseq, k, rho)
                if rem <= tol * max(1.0, abs(value)):
                    return MomentResult(value, rem, k)
        beta = survivors @ Q
    raise OracleError("regeneration-time functional did not converge")


def _unit(n: int, x: int) -> np.ndarray:
    v = np.zeros(n)
    v[x] = 1.0
    return v


# ---------------------------------------------------------------------------
# split kernel matrix and exhaustive path enumeration
# ---------------------------------------------------------------------------


def split_kernel_matrix(chain: FiniteChain) -> np.ndarray:
    """The split kernel as a 2n x 2n matrix over states (x, d) -> 2x + d.

    Built literally from its definition: from (x, 0) the state moves by
    the residual kernel, from (x, 1) by nu; the new coin is heads with
    probability eps 1_C of the landing state.
    """
    n = chain.n
    eps = chain.epsilon
    in_c = chain.in_C.astype(float)
    head = eps * in_c
    out = np.zeros((2 * n, 2 * n))
    for x in range(n):
        for d, row in ((0, chain.Q[x]), (1, chain.nu)):
            out[2 * x + d, 0::2] = row * (1.0 - head)
            out[2 * x + d, 1::2] = row * head
    return out


@dataclass
class PathEnumeration:
    """Exhaustive x-path enumeration to a fixed horizon S.

    paths has shape (n_paths, S+1); the two sides of the regeneration
    identity are evaluated from it by independent code paths: the left
    side walks the split-kernel matrix restricted to the all-tails
    branch, the right side weights residual-chain probabilities by
    (1-eps)^(number of C-visits).
    """

    chain: FiniteChain
    mu: np.ndarray
    paths: np.ndarray

    @property
    def horizon(self) -> int:
        return self.paths.shape[1] - 1

    def keyrelation_sides(self, seq: SeqSpec, g: np.ndarray) -> tuple[float, float]:
        """(left, right) of E-check[xi_S 1{S < sigma_check}] = E~[xi_S (1-eps)^{N_S}]."""
        chain, X = self.chain, self.paths
        S = self.horizon
        g = np.asarray(g, dtype=float)
        n = chain.n

        pcheck = split_kernel_matrix(chain)
        B00 = pcheck[0::2, 0::2]  # (x,0) -> (y,0) block
        head = chain.epsilon * chain.in_C.astype(float)

        xi = np.zeros(X.shape[0])
        for k in range(S + 1):
            xi += seq(k) * g[X[:, k]]

        w_lhs = self.mu[X[:, 0]] * (1.0 - head[X[:, 0]])
        for k in range(S):
            w_lhs = w_lhs * B00[X[:, k], X[:, k + 1]]
        lhs = float(w_lhs @ xi)

        Q = chain.Q
        w_rhs = self.mu[X[:, 0]].copy()
        n_visits = chain.in_C[X[:, 0]].astype(int)
        for k in range(S):
            w_rhs = w_rhs * Q[X[:, k], X[:, k + 1]]
            n_visits = n_visits + chain.in_C[X[:, k + 1]]
        rhs = float((w_rhs * (1.0 - chain.epsilon) ** n_visits) @ xi)
        return lhs, rhs


def enumerate_paths(
    chain: FiniteChain,
    horizon: int,
    mu: np.ndarray | int | None = None,
    max_paths: int = 4_000_000,
) -> PathEnumeration:
    """Enumerate every state path of length horizon+1 (states**paths guard).

    mu is an initial distribution vector, a state index (point mass), or
    None for nu.
    """
    n = chain.n
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    n_paths = n ** (horizon + 1)
    if n_paths > max_paths:
        raise ValueError(
            f"{n}^{horizon + 1} = {n_paths} paths exceeds the cap {max_paths}"
        )
    if mu is None:
        mu_vec = chain.nu.copy()
    elif isinstance(mu, (int, np.integer)):
        mu_vec = _unit(n, int(mu))
    else:
        mu_vec = np.asarray(mu, dtype=float)
    dtype = np.int16 if n < 2**15 else np.int32
    cols = []
    reps_below = 1
    for k in range(horizon + 1):
        block = n ** (horizon - k)
        col = np.tile(np.repeat(np.arange(n, dtype=dtype), block), reps_below)
        cols.append(col)
        reps_below *= n
    X = np.stack(cols, axis=1)
    return PathEnumeration(chain, mu_vec, X)
