"""Sequential and fixed-size decision procedures over Bernoulli run outcomes.

Hypothesis testing uses Wald's sequential probability ratio test with an
indifference region around the threshold; estimation sizes the sample with
the Chernoff-Hoeffding bound and reports exact Clopper-Pearson intervals
computed by bisection on binomial tail sums (no special-function library).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence


class StatError(Exception):
    pass


# ---------------------------------------------------------------------------
# SPRT


@dataclass(frozen=True)
class SprtParams:
    """Threshold theta with indifference half-widths, and error strengths.

    H0: p >= p0 = theta + delta0 is tested against H1: p <= p1 = theta - delta1;
    alpha bounds false positives (accepting H0 under H1), beta false negatives.
    """

    theta: float
    delta0: float = 0.05
    delta1: float = 0.05
    alpha: float = 0.05
    beta: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise StatError(f"threshold {self.theta} outside [0, 1]")
        if self.delta0 <= 0 or self.delta1 <= 0:
            raise StatError("indifference half-widths must be > 0")
        if not (0.0 < self.alpha <= 0.5 and 0.0 < self.beta <= 0.5):
            raise StatError("alpha and beta must be in (0, 0.5]")
        if self.p0 > 1.0 or self.p1 < 0.0:
            raise StatError(
                f"indifference region [{self.p1}, {self.p0}] leaves [0, 1]; "
                "shrink delta0/delta1 or move the threshold"
            )
        if self.p0 <= self.p1:
            raise StatError("p0 must exceed p1")

    @property
    def p0(self) -> float:
        return self.theta + self.delta0

    @property
    def p1(self) -> float:
        return self.theta - self.delta1


@dataclass
class SprtState:
    """Running log-likelihood ratio with H1 in the numerator:
    llr = successes*ln(p1/p0) + failures*ln((1-p1)/(1-p0))."""

    params: SprtParams
    runs: int = 0
    successes: int = 0
    llr: float = 0.0
    decision: Optional[str] = None  # 'H0' | 'H1'

    def __post_init__(self):
        p = self.params
        self._inc_success = math.log(p.p1 / p.p0)
        self._inc_failure = math.log((1.0 - p.p1) / (1.0 - p.p0))
        self._accept_h1 = math.log((1.0 - p.beta) / p.alpha)
        self._accept_h0 = math.log(p.beta / (1.0 - p.alpha))

    def feed(self, outcome: bool) -> Optional[str]:
        """Consume one Bernoulli outcome; returns the decision once reached."""
        if self.decision is not None:
            return self.decision
        self.runs += 1
        if outcome:
            self.successes += 1
            self.llr += self._inc_success
        else:
            self.llr += self._inc_failure
        if self.llr >= self._accept_h1:
            self.decision = "H1"
        elif self.llr <= self._accept_h0:
            self.decision = "H0"
        return self.decision


def sprt_feed(state: SprtState, outcome: bool) -> Optional[str]:
    return state.feed(outcome)


def sprt_decide(outcomes: Iterable[bool], params: SprtParams, max_runs: Optional[int] = None):
    """Run the SPRT over a stream; returns (decision or None, state)."""
    state = SprtState(params)
    for outcome in outcomes:
        if state.feed(outcome) is not None:
            return state.decision, state
        if max_runs is not None and state.runs >= max_runs:
            break
    return None, state


# ---------------------------------------------------------------------------
# Estimation


def required_runs(eps: float, alpha: float) -> int:
    """Sample size for a +-eps interval at confidence 1-alpha, from the
    two-sided Hoeffding bound: N = ceil(ln(2/alpha) / (2 eps^2))."""
    if not (0.0 < eps < 1.0 and 0.0 < alpha < 1.0):
        raise StatError("eps and alpha must be in (0, 1)")
    return max(1, math.ceil(math.log(2.0 / alpha) / (2.0 * eps * eps)))


@dataclass(frozen=True)
class CpInterval:
    lo: float
    hi: float


def _binom_tail_ge(k: int, n: int, p: float) -> float:
    """P(Bin(n, p) >= k), summed directly from the k-th term with the
    multiplicative recurrence; terms beyond machine relevance are cut."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    log_t = (
        math.lgamma(n + 1)
        - math.lgamma(k + 1)
        - math.lgamma(n - k + 1)
        + k * math.log(p)
        + (n - k) * math.log1p(-p)
    )
    t = math.exp(log_t)
    total = 0.0
    ratio = p / (1.0 - p)
    for i in range(k, n + 1):
        total += t
        if i < n:
            t *= (n - i) / (i + 1.0) * ratio
            if t < total * 1e-18 and i > n * p:
                break
    return min(total, 1.0)


def _binom_tail_le(k: int, n: int, p: float) -> float:
    """P(Bin(n, p) <= k) via the complementary upper tail."""
    return 1.0 - _binom_tail_ge(k + 1, n, p)


def clopper_pearson(k: int, n: int, alpha: float = 0.05) -> CpInterval:
    """Exact binomial confidence interval at coverage 1-alpha.

    lo solves P(Bin(n, p) >= k) = alpha/2 (0 when k = 0); hi solves
    P(Bin(n, p) <= k) = alpha/2 (1 when k = n).  Both by bisection on the
    exact tail sums to |dp| <= 1e-9.
    """
    if n < 1:
        raise StatError("n must be >= 1")
    if not 0 <= k <= n:
        raise StatError(f"k={k} outside 0..{n}")
    if not 0.0 < alpha < 1.0:
        raise StatError("alpha must be in (0, 1)")
    half = alpha / 2.0

    def bisect(f, target: float) -> float:
        # f is monotone increasing in p; find p with f(p) = target
        lo_p, hi_p = 0.0, 1.0
        for _ in range(64):
            mid = 0.5 * (lo_p + hi_p)
            if f(mid) < target:
                lo_p = mid
            else:
                hi_p = mid
            if hi_p - lo_p <= 1e-9:
                break
        return 0.5 * (lo_p + hi_p)

    lo = 0.0 if k == 0 else bisect(lambda p: _binom_tail_ge(k, n, p), half)
    # P(Bin <= k) is decreasing in p; bisect on its negation
    hi = 1.0 if k == n else bisect(lambda p: -_binom_tail_le(k, n, p), -half)
    return CpInterval(lo, hi)


@dataclass(frozen=True)
class Estimate:
    p_hat: float
    eps: float
    ci: CpInterval
    runs: int
    successes: int


def estimate(outcomes: Sequence[bool], eps: float, alpha: float) -> Estimate:
    """Point estimate with the Hoeffding +-eps guarantee and a CP interval."""
    n = len(outcomes)
    if n == 0:
        raise StatError("no outcomes")
    k = sum(1 for o in outcomes if o)
    return Estimate(k / n, eps, clopper_pearson(k, n, alpha), n, k)


# ---------------------------------------------------------------------------
# Probability comparison


@dataclass(frozen=True)
class CompareResult:
    decision: str  # 'greater' | 'less' | 'indistinguishable'
    pairs: int
    discordant: int
    level: float  # plot level: 1.0 (P1 > P2), 0.0 (P1 < P2), 0.5 (tie)


def compare(
    pairs: Iterable[tuple[bool, bool]],
    alpha: float = 0.05,
    beta: float = 0.05,
    delta: float = 0.05,
    max_pairs: Optional[int] = None,
) -> CompareResult:
    """Paired comparison of two run generators.

    Concordant pairs carry no information and are discarded; among
    discordant pairs, (1,0) outcomes have probability > 1/2 exactly when
    P1 > P2, so an SPRT against theta = 1/2 with indifference delta decides
    the direction.  Runs out of budget -> indistinguishable at this bound.
    """
    state = SprtState(SprtParams(theta=0.5, delta0=delta, delta1=delta, alpha=alpha, beta=beta))
    used = 0
    discordant = 0
    for a, b in pairs:
        used += 1
        if a != b:
            discordant += 1
            decision = state.feed(bool(a))
            if decision == "H0":
                return CompareResult("greater", used, discordant, 1.0)
            if decision == "H1":
                return CompareResult("less", used, discordant, 0.0)
        if max_pairs is not None and used >= max_pairs:
            break
    return CompareResult("indistinguishable", used, discordant, 0.5)


# ---------------------------------------------------------------------------
# Expected min/max


@dataclass(frozen=True)
class ExpectResult:
    mean: float
    sample_std: float  # extra output beyond the tool's "no confidence yet"
    runs: int


def expect_minmax(aggregates: Sequence[float]) -> ExpectResult:
    """Mean and sample standard deviation of per-run min/max aggregates."""
    n = len(aggregates)
    if n == 0:
        raise StatError("no runs")
    mean = sum(aggregates) / n
    if n < 2:
        return ExpectResult(mean, 0.0, n)
    var = sum((x - mean) ** 2 for x in aggregates) / (n - 1)
    return ExpectResult(mean, math.sqrt(var), n)
