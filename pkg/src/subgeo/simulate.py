"""Split-chain trajectory simulation and Monte Carlo estimators.

Randomness discipline: every regeneration cycle i draws from its own
generator seeded by (master seed, i), and reductions run in cycle-index
order, so estimates are bit-identical for a given (seed, reps) no matter
how many workers execute them.  The vectorised fixed-horizon simulators
for finite chains use one substream per fixed-size replicate chunk with
the same guarantee.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .chain import Kernel, SmallSetSpec, SplitState, residual_sample, split_initial, split_step
from .rates import PsiSpec, SeqSpec

State = Any

_CHUNK = 1024  # replicates per substream in the vectorised simulators
_TIME_BLOCK = 2048


def cycle_rng(seed: int, index: int) -> np.random.Generator:
    """Independent substream for replication `index` of a run seeded by `seed`."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def resolve_workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("SUBGEO_WORKERS", "")
    if env.strip():
        return max(1, int(env))
    return 1


def _map_indexed(fn: Callable[[int], tuple], n: int, workers: int | None) -> list:
    """Apply fn to 0..n-1, returning results in index order.

    Worker count never changes the result: each index owns its substream
    and the reduction order is fixed.
    """
    w = resolve_workers(workers)
    if w <= 1 or n < 4:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, range(n)))


# ---------------------------------------------------------------------------
# trajectory containers
# ---------------------------------------------------------------------------


@dataclass
class SplitTrajectory:
    """A finite split-chain path with its regeneration bookkeeping.

    states[k] = (X_k, d_k); sigma_js are the successive hitting times of
    C; N[k] counts visits to C up to time k; sigma_checks are the times
    with d = 1.  censored marks a path stopped at the cap before the
    event of interest.
    """

    states: list[SplitState]
    sigma_js: list[int]
    N: np.ndarray
    sigma_checks: list[int]
    censored: bool = False

    @property
    def sigma_check(self) -> int | None:
        return self.sigma_checks[0] if self.sigma_checks else None

    def check_invariants(self, ss: SmallSetSpec) -> None:
        assert all(b > a for a, b in zip(self.sigma_js, self.sigma_js[1:]))
        count = 0
        for k, s in enumerate(self.states):
            if ss.contains(s.x):
                count += 1
            assert self.N[k] == count
            if s.d == 1:
                assert ss.contains(s.x), "heads can only be tossed on C"


@dataclass
class MomentEstimate:
    mean: float
    std_error: float
    reps: int
    seed: int
    censored: int = 0
    warning: bool = False

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("standard error cannot be negative")


@dataclass
class BlockRecords:
    """Independent regeneration blocks: lengths and block sums of f."""

    lengths: np.ndarray
    xi: np.ndarray
    censored: int
    seed: int

    @property
    def n_blocks(self) -> int:
        return len(self.lengths)


@dataclass
class TailEstimate:
    M_grid: np.ndarray
    prob: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    reps: int
    censored: int
    seed: int


# ---------------------------------------------------------------------------
# scalar path simulation
# ---------------------------------------------------------------------------


def _start_state(
    kernel: Kernel,
    ss: SmallSetSpec,
    start: "SplitState | State | Callable",
    rng: np.random.Generator,
) -> SplitState:
    if isinstance(start, SplitState):
        return start
    return split_initial(start, ss, rng)


def simulate_split_path(
    kernel: Kernel,
    ss: SmallSetSpec,
    start: "SplitState | State | Callable",
    n_steps: int,
    rng: np.random.Generator,
) -> SplitTrajectory:
    """Simulate (X_0, d_0), ..., (X_n, d_n) and record the regeneration data."""
    s = _start_state(kernel, ss, start, rng)
    states = [s]
    sigma_js: list[int] = []
    sigma_checks: list[int] = []
    N = np.zeros(n_steps + 1, dtype=int)
    count = 0
    for k in range(n_steps + 1):
        if k > 0:
            s = split_step(kernel, ss, s, rng)
            states.append(s)
        if ss.contains(s.x):
            count += 1
            sigma_js.append(k)
        if s.d == 1:
            sigma_checks.append(k)
        N[k] = count
    return SplitTrajectory(states, sigma_js, N, sigma_checks)


def simulate_until_regeneration(
    kernel: Kernel,
    ss: SmallSetSpec,
    start: "SplitState | State | Callable",
    cap: int,
    rng: np.random.Generator,
) -> SplitTrajectory:
    """Run the split chain until the first heads (d_k = 1) or the cap.

    A capped path comes back with censored=True rather than raising: the
    caller decides how censored cycles enter an estimate.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    s = _start_state(kernel, ss, start, rng)
    states = [s]
    sigma_js: list[int] = []
    N_list: list[int] = []
    count = 0
    k = 0
    while True:
        if ss.contains(s.x):
            count += 1
            sigma_js.append(k)
        N_list.append(count)
        if s.d == 1:
            return SplitTrajectory(states, sigma_js, np.array(N_list), [k])
        if k >= cap:
            return SplitTrajectory(states, sigma_js, np.array(N_list), [], censored=True)
        s = split_step(kernel, ss, s, rng)
        states.append(s)
        k += 1


# ---------------------------------------------------------------------------
# cycle-based estimators
# ---------------------------------------------------------------------------


def _run_weighted_cycle(
    kernel: Kernel,
    ss: SmallSetSpec,
    start,
    cap: int,
    rng: np.random.Generator,
    weight: Callable[[int], float],
    g: Callable[[State], float],
) -> tuple[float, int, bool]:
    """One regeneration cycle: (sum_{k=0}^{sigma_check} w(k) g(X_k), length, censored)."""
    s = _start_state(kernel, ss, start, rng)
    total = 0.0
    k = 0
    while True:
        total += weight(k) * g(s.x)
        if s.d == 1:
            return total, k, False
        if k >= cap:
            return total, k, True
        s = split_step(kernel, ss, s, rng)
        k += 1


def estimate_modulated_moment(
    kernel: Kernel,
    ss: SmallSetSpec,
    seq: SeqSpec,
    g: Callable[[State], float],
    x: State,
    reps: int,
    seed: int,
    cap: int = 10**6,
    workers: int | None = None,
) -> MomentEstimate:
    """Monte Carlo for E over the split chain from delta_x of
    sum_{k=0}^{sigma_check} r(k) g(X_k).

    The mean runs over completed cycles only; censored cycles are counted
    separately and flag the estimate once they exceed 1% of the draws.
    """
    if reps < 100:
        raise ValueError("need at least 100 replications")

    def one(i: int):
        return _run_weighted_cycle(kernel, ss, x, cap, cycle_rng(seed, i), seq, g)

    rows = _map_indexed(one, reps, workers)
    vals = np.array([r[0] for r in rows if not r[2]])
    censored = sum(1 for r in rows if r[2])
    if len(vals) == 0:
        raise RuntimeError("all cycles were censored; raise the cap")
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return MomentEstimate(
        mean, se, reps, seed, censored=censored, warning=censored > 0.01 * reps
    )


def excursion_blocks(
    kernel: Kernel,
    ss: SmallSetSpec,
    f: Callable[[State], float],
    n_blocks: int,
    seed: int,
    cap: int = 10**6,
    workers: int | None = None,
) -> BlockRecords:
    """Independent regeneration blocks started from the split of nu.

    Each block is a fresh cycle from nu-check, so block k carries the law
    of sum_{j=0}^{sigma_check} f(X_j) with length sigma_check + 1;
    successive blocks are i.i.d. by construction.  Censored cycles are
    dropped from the arrays and counted.
    """

    def one(i: int):
        rng = cycle_rng(seed, i)
        total, length, cens = _run_weighted_cycle(
            kernel, ss, ss.nu_sample, cap, rng, lambda k: 1.0, f
        )
        return total, length + 1, cens

    rows = _map_indexed(one, n_blocks, workers)
    ok = [(t, l) for t, l, c in rows if not c]
    censored = n_blocks - len(ok)
    xi = np.array([t for t, _ in ok])
    lengths = np.array([l for _, l in ok], dtype=int)
    return BlockRecords(lengths, xi, censored, seed)


def estimate_tail(
    kernel: Kernel,
    ss: SmallSetSpec,
    V: Callable[[State], float],
    psi: PsiSpec,
    M_grid: Sequence[float],
    x: State,
    reps: int,
    seed: int,
    cap: int = 10**6,
    workers: int | None = None,
    z: float = 3.0,
) -> TailEstimate:
    """Empirical tail of sum_{k=0}^{sigma_check} psi(V(X_k)) over the M grid.

    One set of cycles serves every M, so the empirical tail is
    non-increasing in M by construction; the confidence band is the
    normal-approximation binomial interval at z standard errors.
    """
    M_grid = np.asarray(M_grid, dtype=float)
    if np.any(np.diff(M_grid) <= 0):
        raise ValueError("M grid must be strictly increasing")

    def one(i: int):
        return _run_weighted_cycle(
            kernel, ss, x, cap, cycle_rng(seed, i), lambda k: 1.0, lambda y: psi(V(y))
        )

    rows = _map_indexed(one, reps, workers)
    sums = np.array([r[0] for r in rows if not r[2]])
    censored = reps - len(sums)
    n = len(sums)
    prob = np.array([(sums >= M).mean() for M in M_grid])
    se = np.sqrt(prob * (1.0 - prob) / max(n, 1))
    return TailEstimate(
        M_grid,
        prob,
        np.clip(prob - z * se, 0.0, 1.0),
        np.clip(prob + z * se, 0.0, 1.0),
        reps,
        censored,
        seed,
    )


# ---------------------------------------------------------------------------
# vectorised fixed-horizon simulation for finite chains
# ---------------------------------------------------------------------------


def _grouped_step(cur: np.ndarray, cum_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Advance each lane by its own row of a shared CDF table.

    Lanes are grouped by current state so the per-step cost is
    O(lanes + unique states * log n) instead of O(lanes * n).
    """
    nxt = np.empty_like(cur)
    top = cum_rows.shape[1] - 1
    order = np.argsort(cur, kind="stable")
    sorted_states = cur[order]
    boundaries = np.nonzero(np.diff(sorted_states))[0] + 1
    groups = np.split(order, boundaries)
    for lanes in groups:
        s = cur[lanes[0]]
        nxt[lanes] = np.minimum(
            np.searchsorted(cum_rows[s], u[lanes], side="right"), top
        )
    return nxt


def finite_path_sums(
    P: np.ndarray,
    f_vec: np.ndarray,
    start: "int | np.ndarray",
    n_steps: int,
    reps: int,
    seed: int,
) -> np.ndarray:
    """S_n = sum_{k=0}^{n-1} f(X_k) for `reps` independent chains.

    start is a state index or an initial distribution vector.
    Deterministic in (seed, reps) with a fixed chunking scheme.
    """
    P = np.asarray(P, dtype=float)
    cum = np.cumsum(P, axis=1)
    f_vec = np.asarray(f_vec, dtype=float)
    out = np.empty(reps)
    for c0 in range(0, reps, _CHUNK):
        nc = min(_CHUNK, reps - c0)
        rng = cycle_rng(seed, c0 // _CHUNK)
        cur = _init_states(start, nc, rng, P.shape[0])
        S = np.zeros(nc)
        done = 0
        while done < n_steps:
            blk = min(_TIME_BLOCK, n_steps - done)
            U = rng.random((blk, nc))
            for t in range(blk):
                S += f_vec[cur]
                cur = _grouped_step(cur, cum, U[t])
            done += blk
        out[c0 : c0 + nc] = S
    return out


@dataclass
class SplitPathStats:
    """Per-replicate split-path summaries over a fixed horizon n.

    S: sum of f over 0..n-1; i_n: number of heads before n; sigma0:
    first head time (n if none); last_regen: last head time before n
    (-1 if none); S_first: sum of f over 0..min(sigma0, n-1); S_tail:
    sum of f over last_regen+1..n-1.
    """

    S: np.ndarray
    i_n: np.ndarray
    sigma0: np.ndarray
    last_regen: np.ndarray
    S_first: np.ndarray
    S_tail: np.ndarray


def finite_split_path_stats(
    P: np.ndarray,
    C: np.ndarray,
    epsilon: float,
    nu: np.ndarray,
    f_vec: np.ndarray,
    start: "int | np.ndarray",
    n_steps: int,
    reps: int,
    seed: int,
) -> SplitPathStats:
    """Split-chain paths of a finite chain, reduced online to the block
    statistics needed by the decomposition checks (nothing path-length
    sized is stored per replicate)."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    from .chain import residual_matrix  # local import to avoid cycle at module load

    Q = residual_matrix(P, C, epsilon, nu)
    rows = np.vstack([Q, np.asarray(nu, dtype=float)[None, :]])
    cum = np.cumsum(rows, axis=1)
    in_C = np.zeros(n, dtype=bool)
    in_C[np.asarray(C, dtype=int)] = True
    f_vec = np.asarray(f_vec, dtype=float)
    nu_row = n  # row index for regeneration moves

    outs = {k: np.empty(reps) for k in ("S", "i_n", "sigma0", "last_regen", "S_first", "S_tail")}
    for c0 in range(0, reps, _CHUNK):
        nc = min(_CHUNK, reps - c0)
        rng = cycle_rng(seed, c0 // _CHUNK)
        cur = _init_states(start, nc, rng, n)
        S = np.zeros(nc)
        i_n = np.zeros(nc, dtype=int)
        sigma0 = np.full(nc, n_steps, dtype=int)
        last = np.full(nc, -1, dtype=int)
        S_first = np.zeros(nc)
        first_open = np.ones(nc, dtype=bool)
        S_since_regen = np.zeros(nc)
        done = 0
        while done < n_steps:
            blk = min(_TIME_BLOCK, n_steps - done)
            U = rng.random((2, blk, nc))
            for t in range(blk):
                k = done + t
                fx = f_vec[cur]
                S += fx
                S_first += np.where(first_open, fx, 0.0)
                S_since_regen += fx
                heads = in_C[cur] & (U[0, t] < epsilon)
                i_n += heads
                newly = heads & (sigma0 == n_steps)
                sigma0[newly] = k
                first_open &= ~heads
                last[heads] = k
                S_since_regen[heads] = 0.0
                row = np.where(heads, nu_row, cur)
                nxt = _grouped_step(row, cum, U[1, t])
                cur = nxt
            done += blk
        outs["S"][c0 : c0 + nc] = S
        outs["i_n"][c0 : c0 + nc] = i_n
        outs["sigma0"][c0 : c0 + nc] = sigma0
        outs["last_regen"][c0 : c0 + nc] = last
        outs["S_first"][c0 : c0 + nc] = S_first
        outs["S_tail"][c0 : c0 + nc] = S_since_regen
    return SplitPathStats(
        outs["S"],
        outs["i_n"].astype(int),
        outs["sigma0"].astype(int),
        outs["last_regen"].astype(int),
        outs["S_first"],
        outs["S_tail"],
    )


def _init_states(start, nc: int, rng: np.random.Generator, n: int) -> np.ndarray:
    if isinstance(start, (int, np.integer)):
        return np.full(nc, int(start), dtype=int)
    dist = np.asarray(start, dtype=float)
    if dist.shape != (n,):
        raise ValueError("start must be a state index or a length-n distribution")
    return np.searchsorted(np.cumsum(dist), rng.random(nc), side="right").astype(int)
