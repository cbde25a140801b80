"""Rank tests, false-discovery estimates and effect-size summaries.

The Mann-Whitney routines are vectorised over rows so that millions of small
two-sample tests (one per dyad or voxel) run as a handful of array passes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

EXACT_MAX_CELLS = 400
ALTERNATIVES = ("a_less", "a_greater")


class StatsDomainError(ValueError):
    pass


@dataclass(frozen=True)
class UTestResult:
    u: float
    p_one_sided: float
    n_a: int
    n_b: int
    tie_correction_applied: bool
    exact: bool


@dataclass(frozen=True)
class ScreenSummary:
    threshold_p: float
    n_tests: int
    n_significant: int
    fdr_estimate: float
    alternative: str = "a_less"
    n_exact: int = 0
    n_tied: int = 0

    def to_json(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=64)
def _u_counts(n_a: int, n_b: int) -> np.ndarray:
    """Number of rank arrangements giving U_a = 0..n_a*n_b (no ties).

    Uses f(m, n, u) = f(m-1, n, u-n) + f(m, n-1, u): the largest pooled value
    either belongs to sample a (adding n to U) or to sample b.
    """
    # prev[m] holds f(m, n-1, .) while sweeping n upward
    prev = [np.ones(1)] + [np.ones(1) for _ in range(n_a)]  # n = 0: only U = 0
    for n in range(1, n_b + 1):
        cur = [np.ones(1)]
        for m in range(1, n_a + 1):
            c = np.zeros(m * n + 1)
            c[n:] += cur[m - 1]
            c[: len(prev[m])] += prev[m]
            cur.append(c)
        prev = cur
    counts = prev[n_a]
    counts.setflags(write=False)
    return counts


@lru_cache(maxsize=64)
def exact_u_tables(n_a: int, n_b: int) -> tuple[np.ndarray, np.ndarray]:
    """(P(U <= u), P(U >= u)) for u = 0..n_a*n_b under the null."""
    counts = _u_counts(n_a, n_b)
    total = counts.sum()
    cdf = np.cumsum(counts) / total
    sf = np.cumsum(counts[::-1])[::-1] / total
    return np.minimum(cdf, 1.0), np.minimum(sf, 1.0)


def _tie_sums(pooled_sorted: np.ndarray) -> np.ndarray:
    """Sum over tie groups of t^3 - t for each row of a sorted matrix."""
    out = np.zeros(len(pooled_sorted))
    for i, row in enumerate(pooled_sorted):
        _, t = np.unique(row, return_counts=True)
        out[i] = float(np.sum(t.astype(float) ** 3 - t))
    return out


def mann_whitney_rows(a, b, alternative: str = "a_less", method: str = "auto"):
    """One-sided Mann-Whitney U test for every row of ``a`` against ``b``.

    ``a`` is (m, n_a) and ``b`` is (m, n_b).  Returns ``(u, p, tied, exact)``
    arrays of length m, where ``u`` is the U statistic of sample a.  With
    ``alternative="a_less"`` the p-value is P(U <= u_observed).

    ``method="auto"`` uses the exact null distribution for tie-free rows when
    n_a * n_b <= 400 and the tie-corrected normal approximation with a 0.5
    continuity correction otherwise.
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    if method not in ("auto", "exact", "asymptotic"):
        raise ValueError("method must be auto, exact or asymptotic")
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    m, n_a = a.shape
    n_b = b.shape[1]
    if n_a < 1 or n_b < 1:
        raise StatsDomainError("both samples need at least one value")
    if b.shape[0] != m:
        raise ValueError("a and b must have the same number of rows")
    pooled = np.concatenate([a, b], axis=1)
    if not np.all(np.isfinite(pooled)):
        raise StatsDomainError("samples must be finite")
    n = n_a + n_b

    order = np.argsort(pooled, axis=1, kind="stable")
    srt = np.take_along_axis(pooled, order, axis=1)
    tied = np.any(srt[:, 1:] == srt[:, :-1], axis=1)
    ranks = np.empty_like(pooled)
    np.put_along_axis(ranks, order, np.arange(1, n + 1, dtype=np.float64)[None, :], axis=1)
    if tied.any():
        ranks[tied] = rankdata(pooled[tied], method="average", axis=1)
    u = ranks[:, :n_a].sum(axis=1) - n_a * (n_a + 1) / 2.0

    use_exact = ~tied
    if method == "asymptotic" or (method == "auto" and n_a * n_b > EXACT_MAX_CELLS):
        use_exact[:] = False

    p = np.empty(m)
    if use_exact.any():
        cdf, sf = exact_u_tables(n_a, n_b)
        ui = np.rint(u[use_exact]).astype(np.int64)
        p[use_exact] = cdf[ui] if alternative == "a_less" else sf[ui]
    approx = ~use_exact
    if approx.any():
        mean = n_a * n_b / 2.0
        ties = np.zeros(m)
        if tied.any():
            ties[tied] = _tie_sums(srt[tied])
        var = n_a * n_b / 12.0 * ((n + 1) - ties[approx] / (n * (n - 1)))
        sd = np.sqrt(np.maximum(var, 0.0))
        ua = u[approx]
        with np.errstate(divide="ignore", invalid="ignore"):
            if alternative == "a_less":
                z = (ua - mean + 0.5) / sd
                pa = ndtr(z)
            else:
                z = (ua - mean - 0.5) / sd
                pa = ndtr(-z)
        p[approx] = np.where(sd > 0, pa, 1.0)
    p = np.clip(p, np.finfo(float).tiny, 1.0)
    return u, p, tied, use_exact


def mann_whitney_one_sided(a, b, alternative: str = "a_less", method: str = "auto") -> UTestResult:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise StatsDomainError("both samples need at least one value")
    u, p, tied, exact = mann_whitney_rows(a[None], b[None], alternative, method)
    return UTestResult(float(u[0]), float(p[0]), a.size, b.size, bool(tied[0] and not exact[0]), bool(exact[0]))


def fdr_estimate(n_tests: int, threshold_p: float, n_significant: int) -> float:
    """Plug-in false-discovery estimate for a fixed p threshold."""
    if not 0 <= n_significant <= n_tests:
        raise ValueError("need 0 <= n_significant <= n_tests")
    return float(min(1.0, n_tests * threshold_p / max(1, n_significant)))


def bh_qvalues(p) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values (q-values)."""
    p = np.asarray(p, dtype=np.float64)
    n = p.size
    if n == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    scaled = p[order] * n / np.arange(1, n + 1)
    q = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(n)
    out[order] = np.minimum(q, 1.0)
    return out


def cohens_d(a, b) -> float:
    """(mean(b) - mean(a)) / pooled SD; positive when ``a`` is smaller."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise StatsDomainError("Cohen's d needs at least two values per group")
    pooled = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    if not pooled > 0:
        raise StatsDomainError("zero pooled variance")
    return float((b.mean() - a.mean()) / np.sqrt(pooled))


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise StatsDomainError("need two equal-length samples of size >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise StatsDomainError("zero variance")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))
