"""Drift verification and assembly of explicit regeneration-moment bounds.

Every bound is assembled from the proof of the corresponding statement,
constant by constant, and shipped as a BoundCertificate whose provenance
lists each sub-constant with the formula that produced it.  The target
is validity (certified dominance over the exact/Monte-Carlo quantity),
not sharpness; the dominance property tests are the guard against
mis-assembly.

Bound shapes, for a chain with small set (C, eps, nu) and drift
PV <= V - phi(V) + b 1_C, started from the split point mass at x:

- psi-modulated block moment: H_psi(V(x)) 1_Cc(x) + B_psi
- rate-modulated block moment: (1+delta) V(x) 1_Cc(x) + B_phi
- block tail: 2 K0 V(x)/(Phi^-1(cM/psi(K)) - 1)
              + kappa1 s_K kappa2 (H_psi(K)+1) V(x) / ((1-c) M K)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .chain import DriftSpec, Kernel, SmallSetSpec, residual_sample
from .rates import (
    PsiSpec,
    RateSpec,
    SeqSpec,
    big_phi_inverse,
    check_g_membership,
    default_membership_grid,
    h_psi,
    log_big_phi_inverse,
    n_r_delta,
    rate_sequence,
    submultiplicativity_constant,
)
from .simulate import MomentEstimate, cycle_rng, _map_indexed

__all__ = [
    "BoundCertificate",
    "CertificateError",
    "DriftReport",
    "DriftSummaries",
    "verify_drift",
    "lemma_psi_drift",
    "w_rg",
    "prop2_bound",
    "corollary_constants",
    "theorem1_constants",
    "theorem1_bound_psi",
    "theorem1_bound_rate",
    "tail_bound",
    "tail_bound_optimized",
    "envelope_psi",
]


class CertificateError(RuntimeError):
    """A bound constant could not be assembled; the message names it."""


@dataclass
class BoundCertificate:
    kind: str
    constants: dict[str, float]
    provenance: list[tuple[str, str, dict]] = field(default_factory=list)
    grade: str = "exact"
    rate: RateSpec | None = None
    psi: PsiSpec | None = None
    psi_effective: PsiSpec | None = None

    def __post_init__(self):
        if not self.provenance:
            raise ValueError("certificates must carry provenance")
        for name, val in self.constants.items():
            if not math.isfinite(val):
                raise CertificateError(f"constant {name} is not finite")

    def __getitem__(self, name: str) -> float:
        return self.constants[name]

    def record(self, name: str, value: float, formula: str, **inputs) -> float:
        self.constants[name] = value
        self.provenance.append((name, formula, inputs))
        if not math.isfinite(value):
            raise CertificateError(f"constant {name} = {value} from {formula}")
        return value

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "grade": self.grade,
            "constants": dict(self.constants),
            "provenance": [
                {"name": n, "formula": f, "inputs": {k: _jsonable(v) for k, v in i.items()}}
                for n, f, i in self.provenance
            ],
        }


def _jsonable(v):
    if isinstance(v, (int, float, str, bool)) or v is None:
        return v
    return repr(v)


def _new_cert(kind: str, grade: str = "exact", **extra) -> BoundCertificate:
    return BoundCertificate(
        kind, {}, [("_origin", kind, {})], grade=grade, **extra
    )


# ---------------------------------------------------------------------------
# drift verification
# ---------------------------------------------------------------------------


@dataclass
class DriftReport:
    holds: bool
    margin: float
    grade: str  # "exact" | "statistical"
    margins: dict = field(default_factory=dict)


def verify_drift(
    kernel: Kernel,
    ss: SmallSetSpec,
    drift: DriftSpec,
    probe: "list | None" = None,
    tol: float = 1e-9,
    reps: int = 20_000,
    seed: int = 0,
) -> DriftReport:
    """Check PV <= V - phi(V) + b 1_C.

    Exact matrix-vector margins on finite chains; on general spaces PV
    is estimated at the probe states by Monte Carlo and the report is
    statistical grade (holds iff the 3-SE lower margin clears -tol).
    """
    phi = drift.rate
    if kernel.matrix is not None and drift.V_vector is not None:
        V = drift.V_vector
        PV = kernel.matrix @ V
        in_C = np.array([ss.contains(x) for x in range(len(V))])
        margins = V - PV - np.array([phi(v) for v in V]) + drift.b * in_C
        return DriftReport(
            bool(margins.min() >= -tol),
            float(margins.min()),
            "exact",
            {int(i): float(m) for i, m in enumerate(margins)},
        )
    if probe is None:
        raise ValueError("probe states are required on non-finite spaces")
    margins = {}
    worst = math.inf
    holds = True
    for x in probe:
        rng = cycle_rng(seed, hash(("drift", repr(x))) % 2**32)
        draws = np.array(
            [drift.V(kernel.sample(x, rng)) for _ in range(reps)], dtype=float
        )
        pv = draws.mean()
        se = draws.std(ddof=1) / math.sqrt(reps)
        m = drift.V(x) - pv - phi(drift.V(x)) + drift.b * ss.contains(x)
        low = m - 3 * se
        margins[x] = (float(m), float(se))
        worst = min(worst, low)
        holds = holds and low >= -tol
    return DriftReport(holds, float(worst), "statistical", margins)


@dataclass
class DriftSummaries:
    """Small-set aggregates every certificate assembly consumes.

    sup_C_V and sup_C_PV are suprema over C, nu_V = integral of V dnu.
    Exact on finite chains; model-supplied (with their own certification)
    elsewhere.
    """

    sup_C_V: float
    sup_C_PV: float
    nu_V: float
    grade: str = "exact"

    @classmethod
    def from_finite(cls, kernel: Kernel, ss: SmallSetSpec, drift: DriftSpec) -> "DriftSummaries":
        if kernel.matrix is None or drift.V_vector is None or ss.nu_vector is None:
            raise ValueError("exact summaries need the finite matrices")
        C = np.asarray(ss.C_indices, dtype=int)
        V = drift.V_vector
        PV = kernel.matrix @ V
        return cls(float(V[C].max()), float(PV[C].max()), float(ss.nu_vector @ V))


def _residual_mean_level(ss: SmallSetSpec, summ: DriftSummaries) -> float:
    """M_C = sup over C of Q(x, V) <= (sup_C PV - eps nu(V)) / (1 - eps)."""
    if ss.epsilon >= 1.0:
        return summ.sup_C_V
    return max(1.0, (summ.sup_C_PV - ss.epsilon * summ.nu_V) / (1.0 - ss.epsilon))


# ---------------------------------------------------------------------------
# psi envelopes
# ---------------------------------------------------------------------------


def envelope_psi(rate: RateSpec, psi: PsiSpec, grid=None) -> tuple[PsiSpec, float]:
    """The smallest G(phi) envelope of psi of the form max(psi, R* phi).

    For psi already in G(phi) pointwise this is psi itself (factor 1).
    Otherwise psi/phi must fall off beyond an interior maximum R* at u*;
    the envelope equals R* phi(u) below u* and psi above, is a genuine
    member of G(phi), and dominates psi.  Returns (envelope, R*-factor
    relative to the asymptotic ratio) and raises if psi is not even a
    dominated member.
    """
    rep = check_g_membership(rate, psi, grid=grid, mode="dominated")
    if not rep.member:
        raise CertificateError(f"{psi} is not dominated by any member of G({rate})")
    strict = check_g_membership(rate, psi, grid=grid, mode="strict")
    if strict.member:
        return psi, 1.0
    if grid is None:
        grid = default_membership_grid()
    grid = np.asarray(grid, dtype=float)
    ratio = np.array([psi(u) / rate(u) for u in grid])
    i_star = int(np.argmax(ratio))
    u_star, r_star = float(grid[i_star]), float(ratio[i_star])

    def env(u: float) -> float:
        return r_star * rate(u) if u < u_star else max(psi(u), 0.0)

    wrapped = PsiSpec(env, "envelope", (psi, u_star, r_star))
    return wrapped, rep.envelope_factor or 1.0


# ---------------------------------------------------------------------------
# Lemma: the psi-drift of the residual chain
# ---------------------------------------------------------------------------


def lemma_psi_drift(
    kernel: Kernel,
    ss: SmallSetSpec,
    drift: DriftSpec,
    psi: PsiSpec,
    summaries: DriftSummaries | None = None,
) -> BoundCertificate:
    """b_psi with  Q(x, H_psi o V) <= H_psi o V(x) - psi o V(x) + b_psi 1_C(x).

    Off C the inequality follows from concavity of H_psi and the drift;
    on C, Jensen gives Q(x, H_psi o V) <= H_psi(M_C), so

        b_psi = sup_C psi o V + H_psi(M_C),

    degenerating to sup_C psi o V when eps = 1 (Q is then Dirac on C).
    """
    if summaries is None:
        summaries = DriftSummaries.from_finite(kernel, ss, drift)
    rate = drift.rate
    psi_eff, env_factor = envelope_psi(rate, psi)
    cert = _new_cert("LemmaPsiDrift", grade=summaries.grade, rate=rate, psi=psi, psi_effective=psi_eff)
    sup_psi_V = psi_eff(summaries.sup_C_V)
    cert.record("sup_C_psi_V", sup_psi_V, "psi(sup_C V)", sup_C_V=summaries.sup_C_V)
    cert.record("envelope_factor", env_factor, "G(phi)-envelope cost of psi")
    if ss.epsilon >= 1.0:
        cert.record("b_psi", sup_psi_V, "sup_C psi o V  [eps = 1: Q Dirac on C]")
        return cert
    M_C = _residual_mean_level(ss, summaries)
    cert.record(
        "M_C", M_C, "(sup_C PV - eps nu(V)) / (1 - eps)",
        sup_C_PV=summaries.sup_C_PV, nu_V=summaries.nu_V, eps=ss.epsilon,
    )
    H_MC = h_psi(rate, psi_eff, M_C)
    cert.record("H_psi_M_C", H_MC, "H_psi(M_C)")
    cert.record("b_psi", sup_psi_V + H_MC, "sup_C psi o V + H_psi(M_C)")
    return cert


# ---------------------------------------------------------------------------
# W_{r,g} and the regeneration-moment relations
# ---------------------------------------------------------------------------


def w_rg(
    kernel: Kernel,
    ss: SmallSetSpec,
    seq: SeqSpec,
    g: Callable,
    x,
    mode: str = "mc",
    chain=None,
    reps: int = 10_000,
    seed: int = 0,
    cap: int = 10**6,
    workers: int | None = None,
):
    """W_{r,g}(x) = E under the residual dynamics of sum_{k=1}^{tau} r(k) g(X_k).

    mode="exact" delegates to the finite-chain oracle (g must then be a
    vector); mode="mc" simulates the residual chain to the first return.
    With eps = 1 and x in C the residual chain is absorbed at x, so
    tau = 1 and W = r(1) g(x).
    """
    if mode == "exact":
        from .oracle import exact_hitting_moment

        if chain is None:
            raise ValueError("exact mode needs the FiniteChain")
        return exact_hitting_moment(chain, seq, np.asarray(g, dtype=float), x, kernel="Q").value

    if mode != "mc":
        raise ValueError(f"mode must be 'exact' or 'mc', got {mode!r}")

    def one(i: int):
        rng = cycle_rng(seed, i)
        cur = x
        total = 0.0
        for k in range(1, cap + 1):
            cur = residual_sample(kernel, ss, cur, rng)
            total += seq(k) * g(cur)
            if ss.contains(cur):
                return total, False
        return total, True

    rows = _map_indexed(one, reps, workers)
    vals = np.array([v for v, c in rows if not c])
    censored = sum(1 for _, c in rows if c)
    if len(vals) == 0:
        raise RuntimeError("all excursions censored; raise the cap")
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return MomentEstimate(float(vals.mean()), se, reps, seed, censored, censored > 0.01 * reps)


def prop2_bound(
    r0: float,
    g_x: float,
    W_x: float,
    sup_C_W: float,
    epsilon: float,
    K: float,
    E_r_sigma: float,
    x_in_C: bool,
) -> float:
    """r(0) g(x) + W_{r,g}(x) 1_Cc(x) + eps^-1 (1-eps) K (sup_C W) E[r(sigma_check)].

    The explicit regeneration-moment bound in terms of hitting-time
    moments; with eps = 1 the third term vanishes.
    """
    if not math.isfinite(sup_C_W):
        return math.inf
    third = 0.0
    if epsilon < 1.0:
        third = (1.0 - epsilon) / epsilon * K * sup_C_W * E_r_sigma
    return r0 * g_x + (0.0 if x_in_C else W_x) + third


def corollary_constants(
    epsilon: float,
    seq: SeqSpec,
    sup_C_W: float,
    delta: float,
    kind: str = "r",
) -> BoundCertificate:
    """The additive constants of the two regeneration-moment corollaries.

    kind="g": b_g = eps^-1 (1-eps) sup_C W_{1,g}  (unit weights, where
    E[r(sigma_check)] = 1).

    kind="r": with A = eps^-1 (1-eps) K sup_C W_{r,1}, pick
    delta' = delta / (A (1+delta)) so that (1 - A delta')^-1 <= 1+delta,
    then b_r = (1+delta) (r(0) + A r(N_{r,delta'})).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    cert = _new_cert(f"Corollary[{kind}]")
    if kind == "g":
        b_g = 0.0 if epsilon >= 1.0 else (1.0 - epsilon) / epsilon * sup_C_W
        cert.record("b_g", b_g, "eps^-1 (1-eps) sup_C W_{1,g}", eps=epsilon, sup_C_W=sup_C_W)
        return cert
    if kind != "r":
        raise ValueError("kind must be 'g' or 'r'")
    K = max(1.0, submultiplicativity_constant(seq, 64))
    cert.record("K_submult", K, "max r(n+m)/(r(n)r(m)) scan to 64")
    if epsilon >= 1.0:
        cert.record("A", 0.0, "eps = 1: no repeated-excursion term")
        cert.record("b_r", (1.0 + delta) * seq(0), "(1+delta) r(0)")
        return cert
    A = (1.0 - epsilon) / epsilon * K * sup_C_W
    cert.record("A", A, "eps^-1 (1-eps) K sup_C W_{r,1}", eps=epsilon, sup_C_W=sup_C_W)
    if not math.isfinite(A):
        raise CertificateError("sup_C W_{r,1} is infinite: no admissible delta'")
    delta_p = min(delta / (A * (1.0 + delta)), 0.99) if A > 0 else 0.5
    cert.record("delta_prime", delta_p, "delta / (A (1+delta)), capped below 1")
    N = n_r_delta(seq, delta_p)
    cert.record("N_r_delta", float(N), "sup{n: r(n)/sum_1^n r >= delta'}")
    if seq.log(N) > 700.0:
        raise CertificateError(f"r(N_(r,delta')) with N = {N} overflows: b_r unusable")
    b_r = (1.0 + delta) * (seq(0) + A * seq(N))
    cert.record("b_r", b_r, "(1+delta)(r(0) + A r(N))", delta=delta)
    return cert


# ---------------------------------------------------------------------------
# the main explicit-constant assembly
# ---------------------------------------------------------------------------


def theorem1_constants(
    kernel: Kernel,
    ss: SmallSetSpec,
    drift: DriftSpec,
    psi: PsiSpec,
    delta: float,
    summaries: DriftSummaries | None = None,
) -> BoundCertificate:
    """Assemble B_psi, B_phi and the tail constants from the drift data.

    The psi-moment constant chains the unit-weight corollary with the
    residual-chain psi-drift:

        B_psi = sup_C psi o V + eps^-1 (1-eps) (H_psi(M_C) + sup_C psi o V).

    The rate-moment constant starts from the index shift
    sum_{k=1}^tau r(k) = sum_{j=0}^{tau-1} r(j+1), paid for by one of two
    routes (r = r_phi throughout):

    - submultiplicative: r(j+1) <= K r(1) r(j), so for x outside C
      W_{r,1}(x) <= a (V(x)-1) with a = K r(1)/phi(1);
    - ratio-correction: r(j+1) <= (1+delta2) r(j) + c2(j) with c2(j)
      supported on j < N2 (the ratio decreases to 1), giving
      a = (1+delta2)/phi(1) plus the finite constant c2.

    The first route has no additive constant and a bounded coefficient
    for slowly growing rates; the second wins for sharply polynomial
    rates where K r(1) > (1+delta) phi(1).  Whichever route yields a
    coefficient a < 1+delta is combined with the corollary trick:
    delta' = (1 - a/(1+delta))/A makes F = (1 - A delta')^-1 satisfy
    F a <= 1+delta, and

        (1+delta) V(x) 1_Cc(x) + B_phi,
        B_phi = r(0) + F (c_r + A r(N_{r,delta'})),

    with c_r the route's additive constant.  If neither route fits
    (possible when phi(1)(1+delta) <= 1) the assembly refuses.

    Tail constants: K0 = ((1+delta) + B_phi) phi(1) for the
    sigma-check tail via Markov against sum r_phi >= (Phi^-1(m)-1)/phi(1);
    kappa1 = max(1, B_psi/(1-eps)) for the post-eta block; kappa2 bounds
    E[V(X_eta) 1{eta <= sigma-check}] <= kappa2 V(x) through the
    (1-eps)^{N} identity.
    """
    if summaries is None:
        summaries = DriftSummaries.from_finite(kernel, ss, drift)
    rate = drift.rate
    eps = ss.epsilon
    b = drift.b
    phi1 = rate(1.0)
    r = SeqSpec.from_rate(rate)

    psi_eff, env_factor = envelope_psi(rate, psi)
    cert = _new_cert(
        "Theorem1", grade=summaries.grade, rate=rate, psi=psi, psi_effective=psi_eff
    )
    cert.record("delta", delta, "caller's delta")
    cert.record("epsilon", eps, "minorisation constant")
    cert.record("b", b, "drift offset")
    cert.record("phi_1", phi1, "phi(1)")
    cert.record("envelope_factor", env_factor, "G(phi)-envelope cost of psi")

    # ---- B_psi ------------------------------------------------------------
    sup_psi_V = psi_eff(summaries.sup_C_V)
    cert.record("sup_C_psi_V", sup_psi_V, "psi(sup_C V)", sup_C_V=summaries.sup_C_V)
    if eps >= 1.0:
        B_psi = sup_psi_V
        cert.record("B_psi", B_psi, "sup_C psi o V  [eps = 1]")
    else:
        M_C = _residual_mean_level(ss, summaries)
        cert.record("M_C", M_C, "(sup_C PV - eps nu(V))/(1-eps)")
        H_MC = h_psi(rate, psi_eff, M_C)
        cert.record("H_psi_M_C", H_MC, "H_psi(M_C)")
        sup_W_psi = H_MC + sup_psi_V
        cert.record("sup_C_W_psi", sup_W_psi, "H_psi(M_C) + sup_C psi o V")
        b_g = (1.0 - eps) / eps * sup_W_psi
        cert.record("b_g", b_g, "eps^-1 (1-eps) sup_C W_{1,psi o V}")
        B_psi = sup_psi_V + b_g
        cert.record("B_psi", B_psi, "sup_C psi o V + b_g")

    # ---- B_phi ------------------------------------------------------------
    K = max(1.0, submultiplicativity_constant(r, 64))
    cert.record("K_submult", K, "max r(n+m)/(r(n) r(m)) scan to 64")
    a_sub = K * r(1) / phi1
    cert.record("a_submult", a_sub, "K r(1)/phi(1)  [shift via submultiplicativity]")
    if a_sub < (1.0 + delta) * (1.0 - 1e-12):
        route, a_coef, c_r = "submultiplicative", a_sub, 0.0
        cert.record("c_r", 0.0, "no additive shift correction on this route")
    else:
        g_budget = (1.0 + delta) * phi1
        if g_budget <= 1.0 + 1e-9:
            raise CertificateError(
                f"neither shift route fits: K r(1)/phi(1) = {a_sub:.6g} >= 1+delta "
                f"and (1+delta) phi(1) = {g_budget:.6g} <= 1; increase delta"
            )
        delta2 = min(delta / 2.0, (g_budget - 1.0) / 2.0)
        cert.record("delta_2", delta2, "min(delta/2, ((1+delta) phi(1) - 1)/2)")
        N2, c2 = _shift_constants(r, delta2)
        cert.record("N_2", float(N2), "first k with r(k+1)/r(k) <= 1 + delta2")
        cert.record("c_2", c2, "sum_(j<N2) (r(j+1) - (1+delta2) r(j))^+")
        route, a_coef, c_r = "ratio-correction", (1.0 + delta2) / phi1, c2
    cert.record("a_shift", a_coef, f"W_(r,1) coefficient on V - 1  [{route}]")

    if eps >= 1.0:
        A = 0.0
        F = 1.0
        B_phi = r(0) + c_r
        cert.record("A", A, "eps = 1: no repeated-excursion term")
        cert.record("F", F, "eps = 1")
        cert.record("B_phi", B_phi, "r(0) + c_r")
    else:
        M_C = cert.constants["M_C"]
        S_W = r(1) * (1.0 + K * a_coef * max(M_C - 1.0, 0.0)) + (1.0 + K * r(1)) * c_r
        cert.record(
            "S_W", S_W,
            "r(1)(1 + K a (M_C - 1)) + (1 + K r(1)) c_r  [>= sup_C W_{r,1}]",
        )
        A = (1.0 - eps) / eps * K * S_W
        cert.record("A", A, "eps^-1 (1-eps) K S_W")
        delta_p = min((1.0 - a_coef / (1.0 + delta)) / A, 0.99) if A > 0 else 0.5
        cert.record("delta_prime", delta_p, "(1 - a/(1+delta))/A")
        N = n_r_delta(r, delta_p)
        cert.record("N_r_delta", float(N), "sup{n >= 1: r(n)/sum_1^n r >= delta'}")
        F = 1.0 / (1.0 - A * delta_p)
        cert.record("F", F, "(1 - A delta')^-1")
        if r.log(N) > 700.0:
            raise CertificateError(f"r_phi(N_(r,delta')) with N = {N} overflows float range")
        B_phi = r(0) + F * (c_r + A * r(N))
        cert.record("B_phi", B_phi, "r(0) + F (c_r + A r(N))")

    # ---- tail constants ----------------------------------------------------
    K0 = ((1.0 + delta) + B_phi) * phi1
    cert.record("K0", K0, "((1+delta) + B_phi) phi(1)")
    kappa1 = max(1.0, B_psi / (1.0 - eps)) if eps < 1.0 else max(1.0, B_psi)
    cert.record("kappa_1", kappa1, "max(1, B_psi/(1-eps))")
    if eps >= 1.0:
        kappa2 = 1.0 + summaries.sup_C_V
        cert.record("kappa_2", kappa2, "1 + sup_C V  [eps = 1]")
    else:
        G_C = max(summaries.sup_C_V, cert.constants["M_C"])
        cert.record("G_C", G_C, "max(sup_C V, M_C)")
        kappa2 = (1.0 + (1.0 - eps) / eps * G_C) / (1.0 - eps)
        cert.record("kappa_2", kappa2, "(1 + eps^-1 (1-eps) G_C)/(1-eps)")
    cert.record("kappa", max(2.0 * K0, kappa1 * kappa2), "max(2 K0, kappa1 kappa2)")
    return cert


def _shift_constants(r: SeqSpec, delta2: float, guard: int = 10**6) -> tuple[int, float]:
    """Smallest N2 with r(k+1) <= (1+delta2) r(k) for k >= N2, and the
    finite correction c2 collected below it."""
    N2 = 0
    c2 = 0.0
    streak_start = None
    k = 0
    corrections: list[float] = []
    while k < guard:
        ratio = r(k + 1) / r(k)
        if ratio <= 1.0 + delta2:
            if streak_start is None:
                streak_start = k
            if k - streak_start >= 64:  # ratio is eventually monotone; 64 is a margin
                N2 = streak_start
                c2 = sum(corrections[:N2])
                return N2, c2
        else:
            streak_start = None
        corrections.append(max(0.0, r(k + 1) - (1.0 + delta2) * r(k)))
        k += 1
    raise CertificateError("r(k+1)/r(k) did not settle below 1 + delta2")


def theorem1_bound_psi(cert: BoundCertificate, v_x: float, x_in_C: bool) -> float:
    """Evaluate H_psi(V(x)) 1_Cc(x) + B_psi."""
    head = 0.0 if x_in_C else h_psi(cert.rate, cert.psi_effective, v_x)
    return head + cert["B_psi"]


def theorem1_bound_rate(cert: BoundCertificate, v_x: float, x_in_C: bool) -> float:
    """Evaluate (1 + delta) V(x) 1_Cc(x) + B_phi."""
    head = 0.0 if x_in_C else (1.0 + cert["delta"]) * v_x
    return head + cert["B_phi"]


# ---------------------------------------------------------------------------
# the block tail bound
# ---------------------------------------------------------------------------


def tail_bound(
    cert: BoundCertificate,
    M: float,
    K: float,
    c: float,
    v_x: float,
    x_in_C: bool = False,
) -> float:
    """The explicit tail bound for P(sum_(k<=sigma-check) psi(V(X_k)) >= M).

    Evaluates, for the certificate's chain data and envelope psi,

        2 [(1+delta) V(x) 1_Cc + B_phi] phi(1) / (Phi^-1(c M/psi(K)) - 1)
        + kappa1 s_K kappa2 (H_psi(K) + 1) V(x) / ((1-c) M K),

    where s_K = max(1, K psi(K)/(phi(K)(H_psi(K)+1))) certifies the
    decrease of (H_psi(u)+1)/u beyond K.  Not clipped to [0, 1]: values
    above 1 are vacuous but keep the scaling visible.
    """
    if M <= 0:
        raise ValueError("M must be positive")
    if K < 1.0:
        raise ValueError("K must be >= 1")
    if not 0.0 < c < 1.0:
        raise ValueError("c must lie in (0,1)")
    rate, psi = cert.rate, cert.psi_effective
    m = c * M / psi(K)
    moment_head = theorem1_bound_rate(cert, v_x, x_in_C)
    if m <= 0:
        term1 = math.inf
    else:
        t = log_big_phi_inverse(rate, m)  # log Phi^-1(m)
        if t <= 1e-12:
            term1 = math.inf
        else:
            # log(Phi^-1(m) - 1) = t + log(1 - e^-t)
            log_den = t + math.log1p(-math.exp(-t)) if t < 50 else t
            log_term1 = math.log(2.0 * moment_head * rate(1.0)) - log_den
            term1 = math.exp(log_term1) if log_term1 < 700 else math.inf
    HK = h_psi(rate, psi, K)
    s_K = max(1.0, K * psi(K) / (rate(K) * (HK + 1.0)))
    term2 = (
        cert["kappa_1"] * s_K * cert["kappa_2"] * (HK + 1.0) * v_x / ((1.0 - c) * M * K)
    )
    return term1 + term2


def tail_bound_optimized(
    cert: BoundCertificate,
    M: float,
    v_x: float,
    x_in_C: bool = False,
    n_K: int = 48,
) -> tuple[float, float, float]:
    """Minimise the tail bound over K in [1, M^2] (log grid plus golden
    refinement) jointly with c in {0.1, ..., 0.9}.

    Returns (bound, K*, c*).  For a pure power pair (phi = v^a, psi = v^b)
    the paper's closed-form K = M^(a/(b + (a-b)(1-a))) is recorded on the
    certificate for comparison.
    """
    best = (math.inf, 1.0, 0.5)
    Ks = np.logspace(0.0, 2.0 * math.log10(max(M, 2.0)), n_K)
    for c in np.linspace(0.1, 0.9, 9):
        for K in Ks:
            val = tail_bound(cert, M, float(K), float(c), v_x, x_in_C)
            if val < best[0]:
                best = (val, float(K), float(c))
    # golden-section refinement in log K at the best c
    c = best[2]
    lo, hi = math.log(best[1]) - 1.0, math.log(best[1]) + 1.0
    lo = max(lo, 0.0)
    gr = (math.sqrt(5.0) - 1.0) / 2.0
    f = lambda t: tail_bound(cert, M, math.exp(t), c, v_x, x_in_C)
    a, b_ = lo, hi
    x1 = b_ - gr * (b_ - a)
    x2 = a + gr * (b_ - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(40):
        if f1 < f2:
            b_, x2, f2 = x2, x1, f1
            x1 = b_ - gr * (b_ - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + gr * (b_ - a)
            f2 = f(x2)
    t_best = 0.5 * (a + b_)
    val = f(t_best)
    if val < best[0]:
        best = (val, math.exp(t_best), c)
    if (
        cert.rate.family == "polynomial"
        and cert.psi is not None
        and cert.psi.family == "power"
    ):
        alpha = cert.rate.params["alpha"]
        beta = cert.psi.params[0]
        K_paper = M ** (alpha / (beta + (alpha - beta) * (1.0 - alpha)))
        cert.constants["K_closed_form"] = K_paper
    return best
