"""Statistical comparison of full vs reduced models and pair ranking.

Two tests are offered over the per-node loss terms of a trained pair:

* an F-test on the residual sums of squares with (2L+1, n-4L-1) degrees of
  freedom -- the full model carries two 2L-parameter encoders plus the
  interaction coefficient, the reduced model one 2L-parameter encoder;
* a one-tailed Welch's t-test with the alternative that the full model's
  mean per-node loss is smaller.

Both p-values run through one regularized-incomplete-beta kernel so the
package has no runtime dependency on external CDF tables.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleSize, DomainError

__all__ = [
    "PairScore",
    "Ranking",
    "incomplete_beta",
    "f_test",
    "welch_t",
    "score_pair",
    "rank_pairs",
    "write_score_records",
    "read_score_records",
]

_CF_MAX_ITER = 500
_CF_EPS = 3e-16
_CF_TINY = 1e-300


def _beta_continued_fraction(x: float, a: float, b: float) -> float:
    """Modified Lentz evaluation of the continued fraction for I_x(a, b)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        # even step
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        # odd step
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            break
    return h


def incomplete_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta I_x(a, b), absolute error below 1e-12.

    Uses the continued-fraction expansion on whichever of I_x(a, b) and
    1 - I_{1-x}(b, a) converges fast, switching at x = (a+1)/(a+b+2).
    """
    if not (0.0 <= x <= 1.0) or math.isnan(x):
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if a <= 0.0 or b <= 0.0:
        raise DomainError(f"a and b must be positive, got a={a}, b={b}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(x, a, b) / a
    return 1.0 - front * _beta_continued_fraction(1.0 - x, b, a) / b


def _f_sf(f: float, df1: float, df2: float) -> float:
    """Upper tail P(F >= f) of the F distribution."""
    if f <= 0.0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return incomplete_beta(df2 / (df2 + df1 * f), df2 / 2.0, df1 / 2.0)


def _t_cdf(t: float, df: float) -> float:
    """Lower tail P(T <= t) of Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0 if t < 0 else 1.0
    tail = 0.5 * incomplete_beta(df / (df + t * t), df / 2.0, 0.5)
    return tail if t <= 0.0 else 1.0 - tail


def f_test(rss_reduced: float, rss_full: float, n: int, L: int) -> tuple[float, float]:
    """F-statistic and upper-tail p for the reduced-vs-full residual comparison.

    F = ((rss_reduced - rss_full) / (2L+1)) / (rss_full / (n - 4L - 1)).
    A negative numerator (full model worse) clamps to F = 0, p = 1: the
    one-sided test carries no evidence in that direction. rss_full == 0
    returns (inf, 0.0); callers flag that degenerate case.
    """
    df1 = 2 * L + 1
    df2 = n - 4 * L - 1
    if df2 <= 0:
        raise DegenerateSampleSize(
            f"need n > 4L+1 = {4 * L + 1} observations, got n = {n}"
        )
    if rss_full < 0 or rss_reduced < 0:
        raise DomainError("residual sums of squares must be nonnegative")
    if rss_full == 0.0:
        return math.inf, 0.0
    numerator = (rss_reduced - rss_full) / df1
    if numerator <= 0.0:
        return 0.0, 1.0
    f = numerator / (rss_full / df2)
    return f, _f_sf(f, df1, df2)


def welch_t(losses_full, losses_reduced) -> tuple[float, float]:
    """One-tailed Welch's t-test that the full model's mean loss is smaller.

    Returns (t, p) with t = (mean_full - mean_reduced) / se and
    p = P(T <= t) under the Welch-Satterthwaite approximation, so strong
    evidence for the full model gives very negative t and tiny p. When both
    samples are constant: p = 1 if mean_full >= mean_reduced, else p = 0.
    """
    lf = np.asarray(losses_full, dtype=np.float64)
    lr = np.asarray(losses_reduced, dtype=np.float64)
    nf, nr = lf.shape[0], lr.shape[0]
    if nf < 2 or nr < 2:
        raise DegenerateSampleSize("Welch's t-test needs at least 2 observations per sample")
    mf, mr = float(lf.mean()), float(lr.mean())
    vf = float(lf.var(ddof=1))
    vr = float(lr.var(ddof=1))
    if vf == 0.0 and vr == 0.0:
        if mf < mr:
            return -math.inf, 0.0
        if mf > mr:
            return math.inf, 1.0
        return 0.0, 1.0
    af, ar = vf / nf, vr / nr
    se2 = af + ar
    t = (mf - mr) / math.sqrt(se2)
    df = se2 * se2 / (af * af / (nf - 1) + ar * ar / (nr - 1))
    return t, _t_cdf(t, df)


@dataclass(frozen=True)
class PairScore:
    """All per-pair test outputs plus the default ranking score (the F-statistic)."""

    pair_id: int
    f_stat: float
    f_pvalue: float
    t_stat: float
    t_pvalue: float
    score: float
    df1: int
    df2: int
    flags: tuple[str, ...] = ()


def score_pair(pair_id: int, per_node_full, per_node_reduced, L: int) -> PairScore:
    """Run both tests on one pair's per-node loss vectors."""
    lf = np.asarray(per_node_full, dtype=np.float64)
    lr = np.asarray(per_node_reduced, dtype=np.float64)
    n = lf.shape[0]
    rss_full = float(lf.sum())
    rss_reduced = float(lr.sum())
    flags: list[str] = []
    if rss_full == 0.0:
        flags.append("zero_residual")
    f_stat, f_p = f_test(rss_reduced, rss_full, n, L)
    if float(lf.var(ddof=1)) == 0.0 and float(lr.var(ddof=1)) == 0.0:
        flags.append("zero_variance_both")
    t_stat, t_p = welch_t(lf, lr)
    return PairScore(
        pair_id=pair_id,
        f_stat=f_stat,
        f_pvalue=f_p,
        t_stat=t_stat,
        t_pvalue=t_p,
        score=f_stat,
        df1=2 * L + 1,
        df2=n - 4 * L - 1,
        flags=tuple(flags),
    )


@dataclass(frozen=True)
class Ranking:
    """Pairs ordered by descending score; equal scores order by pair id."""

    entries: tuple[tuple[int, float], ...]

    def __post_init__(self):
        scores = [s for (_, s) in self.entries]
        if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
            raise ValueError("ranking scores must be non-increasing")

    def pair_ids(self) -> list[int]:
        return [pid for (pid, _) in self.entries]


def _neg_log10(p: float) -> float:
    if p <= 0.0:
        return math.inf
    return -math.log10(p)


def rank_pairs(scores, mode: str = "f") -> Ranking:
    """Order PairScores descending by F-statistic (mode "f") or by
    -log10 of the Welch p-value (mode "welch")."""
    if mode == "f":
        keyed = [(s.f_stat, s.pair_id) for s in scores]
    elif mode == "welch":
        keyed = [(_neg_log10(s.t_pvalue), s.pair_id) for s in scores]
    else:
        raise ValueError(f"mode must be 'f' or 'welch', got {mode!r}")
    order = sorted(keyed, key=lambda ks: (-ks[0], ks[1]))
    return Ranking(entries=tuple((pid, key) for (key, pid) in order))


def write_score_records(path, records) -> None:
    """One JSON object per line; infinities serialize as ``Infinity`` (readable back)."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


def read_score_records(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
