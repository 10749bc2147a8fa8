"""Rate-function calculus for subgeometric drift conditions.

The central objects are a concave non-decreasing rate function phi on
[1, oo), its primitive

    Phi(v) = integral_1^v dx / phi(x),

the induced rate sequence r_phi(u) = phi(Phi^{-1}(u)) / phi(1), the
weighted primitives

    H_psi(v) = integral_1^v (psi / phi)(u) du

for envelope functions psi, and the admissibility class G(phi) of
non-decreasing psi with psi/phi non-increasing.  Everything here is
deterministic numerics: adaptive Simpson quadrature on a lazily grown
log-spaced checkpoint grid, and bracketed bisection for the inverse.
"""

from __future__ import annotations

import bisect as _bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .numerics import NumericsError, adaptive_simpson

__all__ = [
    "RateSpec",
    "PsiSpec",
    "SeqSpec",
    "GMembershipReport",
    "big_phi",
    "big_phi_inverse",
    "log_big_phi_inverse",
    "rate_sequence",
    "h_psi",
    "psi_product",
    "psi_power",
    "psi_times_h",
    "h_as_psi",
    "default_membership_grid",
    "check_g_membership",
    "submultiplicativity_constant",
    "n_r_delta",
]

_VALIDATION_GRID = np.logspace(0.0, 12.0, 128)
# Relative slack for monotonicity / concavity checks on sampled grids.
_GRID_TOL = 1e-9


class RateDomainError(ValueError):
    """Argument outside the domain [1, oo) or [0, oo) of the rate calculus."""


# ---------------------------------------------------------------------------
# rate-function families
# ---------------------------------------------------------------------------


class RateSpec:
    """A concave, non-decreasing rate function phi: [1, oo) -> (0, oo).

    Construct through one of the classmethods:

    >>> phi = RateSpec.polynomial(0.5)            # phi(v) = v**0.5
    >>> phi = RateSpec.polynomial(0.6, scale=2.0)  # phi(v) = 2 v**0.6
    >>> phi = RateSpec.log_perturbed(c=1.0, alpha=1.0)  # c (v+d)/log^a (v+d)

    Monotonicity and concavity are verified on a log-spaced grid at
    construction; for custom functions this sampled check is the only
    certificate available and the grid [1, 1e12] is the documented
    verification range.
    """

    def __init__(
        self,
        fn: Callable[[float], float],
        deriv: Callable[[float], float] | None,
        family: str,
        params: dict,
        validate: bool = True,
    ):
        self._fn = fn
        self._deriv = deriv
        self.family = family
        self.params = dict(params)
        self._phi_cum = _LogGridIntegral(lambda t: -self.log_at_log(t))
        self._h_cache: dict[PsiSpec, _LogGridIntegral] = {}
        self._rseq_cache: dict[int, float] = {}
        if validate:
            self._validate()

    # -- constructors ------------------------------------------------------

    @classmethod
    def polynomial(cls, alpha: float, scale: float = 1.0) -> "RateSpec":
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"polynomial exponent must lie in (0,1), got {alpha}")
        if scale <= 0.0:
            raise ValueError("scale must be positive")
        return cls(
            lambda v: scale * v**alpha,
            lambda v: scale * alpha * v ** (alpha - 1.0),
            "polynomial",
            {"alpha": alpha, "scale": scale},
            validate=False,
        )

    @classmethod
    def log_perturbed(cls, c: float, alpha: float, d: float | None = None) -> "RateSpec":
        """phi(v) = c (v + d) / log(v + d)**alpha.

        phi is concave increasing on [1, oo) iff log(v + d) > 1 + alpha
        there, so the smallest admissible shift is d = e**(1+alpha) - 1;
        that value (plus a tiny margin) is used when d is omitted.
        """
        if c <= 0 or alpha <= 0:
            raise ValueError("c and alpha must be positive")
        d_min = math.exp(1.0 + alpha) - 1.0
        if d is None:
            d = d_min * (1.0 + 1e-9) + 1e-9
        elif d < d_min:
            raise ValueError(
                f"d={d} too small: concavity on [1,oo) needs d >= e^(1+alpha)-1 = {d_min:.6g}"
            )

        def fn(v: float) -> float:
            w = v + d
            return c * w / math.log(w) ** alpha

        def deriv(v: float) -> float:
            w = v + d
            lw = math.log(w)
            return c * (lw - alpha) / lw ** (alpha + 1.0)

        return cls(fn, deriv, "log_perturbed", {"c": c, "d": d, "alpha": alpha})

    @classmethod
    def custom(
        cls, fn: Callable[[float], float], deriv: Callable[[float], float] | None = None
    ) -> "RateSpec":
        return cls(fn, deriv, "custom", {})

    # -- evaluation --------------------------------------------------------

    def __call__(self, v: float) -> float:
        return self._fn(v)

    def deriv(self, v: float) -> float:
        if self._deriv is not None:
            return self._deriv(v)
        h = max(1e-7, 1e-7 * v)
        lo = max(1.0, v - h)
        return (self._fn(v + h) - self._fn(lo)) / (v + h - lo)

    def log_at_log(self, t: float) -> float:
        """log phi(e^t), finite for arguments far beyond the float range.

        Needed because Phi^{-1} of a subexponentially slow rate lives at
        v = e^t with t ~ 1e6; the analytic families evaluate exactly.
        """
        if self.family == "polynomial":
            return math.log(self.params["scale"]) + self.params["alpha"] * t
        if self.family == "log_perturbed":
            c, d, alpha = self.params["c"], self.params["d"], self.params["alpha"]
            log_w = t + math.log1p(d * math.exp(-t)) if t > 700.0 else math.log(math.exp(t) + d)
            return math.log(c) + log_w - alpha * math.log(log_w)
        if t > 700.0:
            raise NumericsError(
                "custom rate function cannot be evaluated beyond the float range"
            )
        return math.log(self._fn(math.exp(t)))

    def _validate(self) -> None:
        vals = np.array([self._fn(v) for v in _VALIDATION_GRID])
        if not np.all(vals > 0.0):
            raise ValueError("rate function must be positive on [1, 1e12]")
        diffs = np.diff(vals)
        if np.any(diffs < -_GRID_TOL * np.abs(vals[1:])):
            raise ValueError("rate function must be non-decreasing (sampled check)")
        # concavity: slopes between consecutive grid points must not increase
        slopes = diffs / np.diff(_VALIDATION_GRID)
        if np.any(np.diff(slopes) > _GRID_TOL * np.maximum(np.abs(slopes[1:]), 1e-300)):
            raise ValueError("rate function must be concave (sampled check)")

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v:.6g}" for k, v in self.params.items())
        return f"RateSpec.{self.family}({inner})"


@dataclass(frozen=True)
class PsiSpec:
    """An envelope function psi: [1, oo) -> (0, oo), candidate member of G(phi)."""

    fn: Callable[[float], float]
    family: str = "custom"
    params: tuple = ()

    def __call__(self, v: float) -> float:
        return self.fn(v)

    @classmethod
    def power(cls, beta: float) -> "PsiSpec":
        return cls(lambda u: u**beta, "power", (beta,))

    @classmethod
    def log_power(cls, beta: float, shift: float = 1.0) -> "PsiSpec":
        return cls(lambda u: math.log(shift + u) ** beta, "log_power", (beta, shift))

    @classmethod
    def power_log(cls, p: float, q: float, shift: float = math.e) -> "PsiSpec":
        return cls(
            lambda u: u**p * math.log(shift + u) ** q, "power_log", (p, q, shift)
        )

    @classmethod
    def one(cls) -> "PsiSpec":
        return cls(lambda u: 1.0, "power", (0.0,))

    @classmethod
    def custom(cls, fn: Callable[[float], float], name: str = "custom") -> "PsiSpec":
        return cls(fn, name, ())

    def log_at_log(self, t: float) -> float:
        """log psi(e^t); exact for the analytic families at any depth."""
        if self.family == "power":
            return self.params[0] * t
        if self.family == "log_power":
            beta, shift = self.params
            log_w = t + math.log1p(shift * math.exp(-t)) if t > 700.0 else math.log(shift + math.exp(t))
            return beta * math.log(log_w)
        if self.family == "power_log":
            p, q, shift = self.params
            log_w = t + math.log1p(shift * math.exp(-t)) if t > 700.0 else math.log(shift + math.exp(t))
            return p * t + q * math.log(log_w)
        if t > 700.0:
            raise NumericsError(
                "custom psi function cannot be evaluated beyond the float range"
            )
        return math.log(self.fn(math.exp(t)))

    def __repr__(self) -> str:
        return f"PsiSpec.{self.family}{self.params}"


# ---------------------------------------------------------------------------
# cumulative integrals on a lazily grown log-spaced checkpoint grid
# ---------------------------------------------------------------------------

_LN2 = math.log(2.0)
_T_MAX = 5e6  # guard: log-argument ceiling for inversions


class _LogGridIntegral:
    """Cumulative F(v) = integral_1^v f(x) dx for positive integrands.

    Checkpoints are kept in t = log v; each segment is integrated in the
    t variable (integrand e^t f(e^t)) which keeps adaptive Simpson
    efficient across many decades.  Segment spacing grows geometrically,
    so reaching t ~ 1e6 (needed when the inverse is subexponentially
    large) costs only ~60 segments.  The integrand is supplied in log
    form, log_f(t) = log f(e^t), so that e^t never has to be
    materialised for arguments beyond the float range.
    """

    def __init__(self, log_f_at_log: Callable[[float], float]):
        self._log_f = log_f_at_log
        self._t = [0.0]
        self._F = [0.0]

    def _g(self, t: float) -> float:
        expo = t + self._log_f(t)
        if expo > 700.0:
            raise NumericsError("integral exceeds the float range")
        return math.exp(expo)

    def _segment(self, t0: float, t1: float) -> float:
        if t1 <= t0:
            return 0.0
        return adaptive_simpson(self._g, t0, t1, rel_tol=1e-11, abs_tol=1e-300)

    def _grow_one(self) -> None:
        t_last = self._t[-1]
        t_next = max(t_last + _LN2, 1.2 * t_last)
        if t_next > _T_MAX:
            raise NumericsError("integral checkpoint grid exceeded the guard range")
        self._F.append(self._F[-1] + self._segment(t_last, t_next))
        self._t.append(t_next)

    def _extend_to_t(self, t: float) -> None:
        while self._t[-1] < t:
            self._grow_one()

    def value_at_t(self, t: float) -> float:
        if t <= 0.0:
            return 0.0
        self._extend_to_t(t)
        j = _bisect.bisect_right(self._t, t) - 1
        return self._F[j] + self._segment(self._t[j], t)

    def value(self, v: float) -> float:
        return self.value_at_t(math.log(v))

    def inverse_t(self, u: float) -> float:
        """Return t with F(e^t) = u (u >= 0)."""
        if u <= 0.0:
            return 0.0
        while self._F[-1] < u:
            self._grow_one()
        j = _bisect.bisect_left(self._F, u)
        t_lo, t_hi = self._t[j - 1], self._t[j]
        f_lo, f_hi = self._F[j - 1], self._F[j]
        # Newton from the linear interpolant, keeping a running partial
        # integral so each iteration only integrates the increment.
        t = t_lo + (t_hi - t_lo) * (u - f_lo) / max(f_hi - f_lo, 1e-300)
        f_cur = f_lo + self._segment(t_lo, t)
        lo, hi = t_lo, t_hi
        for _ in range(80):
            resid = f_cur - u
            if abs(resid) <= 1e-13 * max(1.0, u) or hi - lo <= 1e-14 * max(1.0, hi):
                break
            if resid < 0.0:
                lo = max(lo, t)
            else:
                hi = min(hi, t)
            slope = self._g(t)
            t_new = t - resid / slope if slope > 0.0 else 0.5 * (lo + hi)
            if not (lo < t_new < hi):
                t_new = 0.5 * (lo + hi)
            if t_new == t:
                break
            if t_new > t:
                f_cur += self._segment(t, t_new)
            else:
                f_cur -= self._segment(t_new, t)
            t = t_new
        return max(t, 0.0)


# ---------------------------------------------------------------------------
# Phi, its inverse, and the induced rate sequence
# ---------------------------------------------------------------------------


def big_phi(rate: RateSpec, v: float) -> float:
    """Phi(v) = integral_1^v dx/phi(x); Phi(1) = 0, strictly increasing."""
    if v < 1.0:
        raise RateDomainError(f"Phi is defined on [1, oo); got v={v}")
    return rate._phi_cum.value(v)


def log_big_phi_inverse(rate: RateSpec, u: float) -> float:
    """log of Phi^{-1}(u); robust when the inverse overflows a float."""
    if u < 0.0:
        raise RateDomainError(f"Phi^-1 is defined on [0, oo); got u={u}")
    return rate._phi_cum.inverse_t(u)


def big_phi_inverse(rate: RateSpec, u: float) -> float:
    """Phi^{-1}(u) (as a float; +inf if it exceeds the float range)."""
    t = log_big_phi_inverse(rate, u)
    if t > 709.0:
        return math.inf
    return math.exp(t)


def log_rate_sequence(rate: RateSpec, k: float) -> float:
    """log r_phi(k), robust when the sequence itself overflows a float."""
    if k < 0:
        raise RateDomainError(f"rate sequence index must be >= 0; got {k}")
    t = log_big_phi_inverse(rate, float(k))
    return rate.log_at_log(t) - math.log(rate(1.0))


def rate_sequence(rate: RateSpec, k: float) -> float:
    """r_phi(k) = phi(Phi^{-1}(k)) / phi(1); r_phi(0) = 1, log-concave in k.

    Integer arguments are memoised since sequence scans evaluate them
    repeatedly.
    """
    if k < 0:
        raise RateDomainError(f"rate sequence index must be >= 0; got {k}")
    is_int = float(k).is_integer()
    ik = int(k)
    if is_int and ik in rate._rseq_cache:
        return rate._rseq_cache[ik]
    val = math.exp(log_rate_sequence(rate, k))
    if is_int:
        rate._rseq_cache[ik] = val
    return val


# ---------------------------------------------------------------------------
# H_psi and membership in G(phi)
# ---------------------------------------------------------------------------


def _h_integral(rate: RateSpec, psi: PsiSpec) -> _LogGridIntegral:
    cum = rate._h_cache.get(psi)
    if cum is None:
        cum = _LogGridIntegral(lambda t: psi.log_at_log(t) - rate.log_at_log(t))
        rate._h_cache[psi] = cum
    return cum


def h_psi(rate: RateSpec, psi: PsiSpec, v: float) -> float:
    """H_psi(v) = integral_1^v (psi/phi)(u) du; concave, H_psi(1) = 0.

    For psi in G(phi) the integrand is non-increasing, which gives the
    linear bound H_psi(v) <= (psi/phi)(1) (v - 1).
    """
    if v < 1.0:
        raise RateDomainError(f"H_psi is defined on [1, oo); got v={v}")
    return _h_integral(rate, psi).value(v)


def psi_product(a: PsiSpec, b: PsiSpec) -> PsiSpec:
    return PsiSpec(lambda u: a(u) * b(u), "product", (a, b))


def psi_power(psi: PsiSpec, p: float) -> PsiSpec:
    if psi.family == "power":
        return PsiSpec.power(psi.params[0] * p)
    return PsiSpec(lambda u: psi(u) ** p, "pointwise_power", (psi, p))


def h_as_psi(rate: RateSpec, psi: PsiSpec) -> PsiSpec:
    """The function v -> H_psi(v), wrapped so it can be fed back into h_psi."""
    return PsiSpec(lambda u: h_psi(rate, psi, u), "h_of", (psi,))


def psi_times_h(rate: RateSpec, psi: PsiSpec) -> PsiSpec:
    """The composite v -> psi(v) H_psi(v) used by the limit-theorem gates."""
    return PsiSpec(lambda u: psi(u) * h_psi(rate, psi, u), "psi_h", (psi,))


def default_membership_grid(n: int = 256) -> np.ndarray:
    return np.logspace(0.0, 12.0, n)


@dataclass
class GMembershipReport:
    member: bool
    mode: str  # "exact" | "sampled" | "dominated"
    violations: list[tuple[float, float, str]] = field(default_factory=list)
    envelope_factor: float | None = None

    def __bool__(self) -> bool:
        return self.member


def check_g_membership(
    rate: RateSpec,
    psi: PsiSpec,
    grid: Sequence[float] | np.ndarray | None = None,
    mode: str = "dominated",
) -> GMembershipReport:
    """Check psi in G(phi): psi non-decreasing and psi/phi non-increasing.

    The check is performed on adjacent pairs of a sorted grid (log-spaced
    over [1, 1e12] by default) and is therefore a necessary-condition
    scan, not a proof; pure power families against a polynomial phi are
    answered exactly.

    The default mode "dominated" accepts functions that an actual member
    of G(phi) envelopes from above at bounded cost: psi must be
    non-decreasing and psi/phi non-increasing beyond an interior maximum
    (the envelope is phi times the running tail-sup of psi/phi, and the
    report records its cost over psi itself).  This is the membership
    notion the moment bounds consume: admissible envelopes like
    log-powers against a log-perturbed rate, or composites like
    psi*H_psi which vanish at 1, always rise initially and would fail a
    literal pointwise scan.  mode="strict" performs that literal scan.
    """
    if grid is None:
        grid = default_membership_grid()
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("membership grid must be non-empty")
    if grid.size < 2:
        raise ValueError("membership grid needs at least two points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("membership grid must be strictly increasing")

    # exact short-circuit: pure powers against a (scaled) polynomial rate,
    # where strict and dominated membership coincide (the ratio is monotone)
    if rate.family == "polynomial" and psi.family == "power":
        alpha = rate.params["alpha"]
        beta = psi.params[0]
        member = 0.0 <= beta <= alpha
        violations = [] if member else [(float(grid[0]), float(grid[-1]), "exponent")]
        return GMembershipReport(member, "exact", violations, 1.0 if member else None)

    pvals = np.array([psi(u) for u in grid])
    ratio = pvals / np.array([rate(u) for u in grid])
    violations: list[tuple[float, float, str]] = []

    scale_p = np.maximum(np.abs(pvals[:-1]), np.abs(pvals[1:]))
    dec_mask = np.diff(pvals) < -_GRID_TOL * np.maximum(scale_p, 1e-300)
    for i in np.nonzero(dec_mask)[0]:
        violations.append((float(grid[i]), float(grid[i + 1]), "psi decreasing"))

    scale_r = np.maximum(np.abs(ratio[:-1]), np.abs(ratio[1:]))
    inc_mask = np.diff(ratio) > _GRID_TOL * np.maximum(scale_r, 1e-300)

    if mode == "strict":
        for i in np.nonzero(inc_mask)[0]:
            violations.append((float(grid[i]), float(grid[i + 1]), "psi/phi increasing"))
        return GMembershipReport(not violations, "sampled", violations)

    if mode != "dominated":
        raise ValueError(f"unknown membership mode {mode!r}")

    argmax = int(np.argmax(ratio))
    tail_ok = not np.any(inc_mask[argmax:])
    interior = argmax < grid.size - 1
    if not tail_ok:
        i = argmax + int(np.nonzero(inc_mask[argmax:])[0][0])
        violations.append((float(grid[i]), float(grid[i + 1]), "psi/phi increasing past max"))
    if not interior:
        violations.append((float(grid[-2]), float(grid[-1]), "psi/phi still rising at grid end"))
    member = tail_ok and interior and not any(v[2] == "psi decreasing" for v in violations)
    factor = None
    if member:
        tail_val = ratio[-1]
        factor = float(ratio[argmax] / tail_val) if tail_val > 0 else math.inf
    return GMembershipReport(member, "dominated", violations, factor)


# ---------------------------------------------------------------------------
# subgeometric sequences
# ---------------------------------------------------------------------------


class SeqSpec:
    """A positive sequence r(k), k >= 0, with an optional claim r in Lambda_0.

    Lambda_0 membership means: r non-decreasing with log r(n)/n
    non-increasing to 0 (so r(0) = 1 by the usual normalisation).  The
    claim is verified on a finite range by validate_on_range; geometric
    sequences are accepted with in_lambda0=False purely for
    submultiplicativity experiments.
    """

    def __init__(
        self,
        fn: Callable[[int], float],
        in_lambda0: bool = True,
        name: str = "",
        log_fn: Callable[[int], float] | None = None,
    ):
        self._fn = fn
        self._log_fn = log_fn
        self.in_lambda0 = in_lambda0
        self.name = name or "seq"
        self._cache: dict[int, float] = {}
        self._log_cache: dict[int, float] = {}

    def __call__(self, k: int) -> float:
        v = self._cache.get(k)
        if v is None:
            v = float(self._fn(k))
            self._cache[k] = v
        return v

    def log(self, k: int) -> float:
        """log r(k); exact for subexponential sequences beyond float range."""
        v = self._log_cache.get(k)
        if v is None:
            v = float(self._log_fn(k)) if self._log_fn is not None else math.log(self(k))
            self._log_cache[k] = v
        return v

    @classmethod
    def constant(cls) -> "SeqSpec":
        return cls(lambda k: 1.0, True, "one")

    @classmethod
    def polynomial(cls, delta: float) -> "SeqSpec":
        return cls(lambda k: (1.0 + k) ** delta, True, f"(1+k)^{delta:g}")

    @classmethod
    def geometric(cls, base: float) -> "SeqSpec":
        return cls(lambda k: base**k, False, f"{base:g}^k")

    @classmethod
    def from_rate(cls, rate: RateSpec) -> "SeqSpec":
        return cls(
            lambda k: rate_sequence(rate, k),
            True,
            f"r_phi[{rate.family}]",
            log_fn=lambda k: log_rate_sequence(rate, k),
        )

    def validate_on_range(self, n_check: int = 1000, tol: float = 1e-10) -> None:
        vals = [self(k) for k in range(n_check + 1)]
        if self.in_lambda0 and abs(vals[0] - 1.0) > tol:
            raise ValueError(f"Lambda_0 sequences are normalised to r(0)=1, got {vals[0]}")
        for k in range(n_check):
            if vals[k + 1] < vals[k] * (1.0 - tol):
                raise ValueError(f"sequence decreases at k={k}")
        if self.in_lambda0:
            ratios = []
            prev = math.inf
            for k in range(1, n_check + 1):
                cur = math.log(vals[k]) / k if vals[k] > 0 else -math.inf
                if cur > prev + tol:
                    raise ValueError(f"log r(n)/n increases at n={k}")
                prev = cur
                ratios.append(cur)
            # "down to 0": the ratio must actually shrink on the checked
            # range (a constant positive ratio is geometric, not Lambda_0)
            if ratios[-1] > 1e-3 and ratios[-1] > ratios[0] * (1.0 - 1e-6):
                raise ValueError("log r(n)/n does not decrease towards 0 on the range")

    def __repr__(self) -> str:
        return f"SeqSpec({self.name})"


def submultiplicativity_constant(seq: SeqSpec, n_max: int) -> float:
    """K = max over 0 <= n, m <= n_max of r(n+m) / (r(n) r(m)).

    Sequences in Lambda_0 satisfy r(n+m) <= r(n) r(m), so the scan
    returns 1 for them (up to float rounding); K > 1 quantifies the
    failure for sequences outside the class.
    """
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    logs = np.array([seq.log(k) for k in range(2 * n_max + 1)])
    best = -math.inf
    for n in range(n_max + 1):
        gaps = logs[n : n + n_max + 1] - logs[n] - logs[: n_max + 1]
        best = max(best, float(gaps.max()))
    return math.exp(best)


def n_r_delta(seq: SeqSpec, delta: float, guard: int = 10**7, window: int = 64) -> int:
    """N_{r,delta} = sup{ n >= 1 : r(n) / sum_{k=1}^n r(k) >= delta }.

    Finite for any r in Lambda (the ratio tends to 0).  The scan stops
    once the ratio has stayed below delta for `window` consecutive n; a
    non-terminating scan (geometric r) trips the guard.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0,1), got {delta}")
    log_delta = math.log(delta)
    log_total = -math.inf
    last_hit = 0
    below = 0
    n = 0
    while n < guard:
        n += 1
        lr = seq.log(n)
        log_total = np.logaddexp(log_total, lr)
        if lr - log_total >= log_delta:
            last_hit = n
            below = 0
        else:
            below += 1
            if below >= window:
                return max(last_hit, 1)
    raise NumericsError(
        f"N_(r,{delta}) scan did not terminate below n={guard}: sequence not subgeometric?"
    )
