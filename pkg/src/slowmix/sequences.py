"""Deterministic sequence facts: convolution stability, regularly varying
sums, the discrete maximal function, and the two window inequalities.

These are statements about infinite sums, checked here on finite inputs.  The
policy throughout is enclosure, not truncation-and-hope: every discarded tail
is covered by an explicit integral-comparison bound derived from the declared
decay of the coefficient sequence, and the bound travels with the result as a
one-sided widening of the reported ratio.  Ratios are therefore honest upper
bounds; "bounded" claims are tested as drift limits across a scale ladder,
since the underlying lemmas only assert existence of constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

__all__ = [
    "DecaySequence",
    "convolve",
    "KaramataReport",
    "karamata_check",
    "MaximalFunction",
    "maximal_function",
    "IneqReport",
    "check_ineq_q_gt_2",
    "check_ineq_q_lt_2",
    "critical_window_probe",
    "stable_power_check",
]


def _powabs(x: np.ndarray, p: float) -> np.ndarray:
    """|x|**p with fast paths for the small integer and half-integer powers
    that dominate the inequality checks."""
    a = np.abs(x)
    if p == 1.0:
        return a
    if p == 2.0:
        return a * a
    if p == 3.0:
        return a * a * a
    if p == 4.0:
        sq = a * a
        return sq * sq
    if p == 0.5:
        return np.sqrt(a)
    if p == 1.5:
        return a * np.sqrt(a)
    if p == 2.5:
        return a * a * np.sqrt(a)
    return a**p


@dataclass(frozen=True)
class DecaySequence:
    """Nonnegative coefficients with a declared polynomial decay rate.

    The declaration is a contract, not a fit: ``realized_constant`` is the
    smallest C with c_n <= C (n+1)^-q on the stored range, and every tail
    bound downstream multiplies that constant by an exact integral comparison.
    """

    values: np.ndarray
    q: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("values must be a nonempty 1-d array")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite and nonnegative")
        if not np.isfinite(self.q):
            raise ValueError("decay exponent must be finite")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size

    @property
    def realized_constant(self) -> float:
        n = np.arange(self.values.size, dtype=float)
        return float(np.max((n + 1.0) ** self.q * self.values))

    def tail_sum_constant(self, q: float | None = None) -> float:
        """sup over 1 <= n < N of n^q * sum_{h > n} c_h, on the stored range."""
        qq = self.q if q is None else q
        suff = np.concatenate((np.cumsum(self.values[::-1])[::-1], [0.0]))
        n = np.arange(1, self.values.size)
        return float(np.max(n**qq * suff[n + 1])) if n.size else 0.0

    @classmethod
    def power_tail(cls, q: float, length: int, constant: float = 1.0) -> "DecaySequence":
        n = np.arange(length, dtype=float)
        return cls(values=constant * (n + 1.0) ** (-q), q=q)


def convolve(c: DecaySequence, d: DecaySequence) -> DecaySequence:
    """Exact convolution truncated to the common length.

    The truncation is prefix-exact (entry n only involves indices <= n), so
    commutativity and associativity hold to float round-off.  The output
    inherits the weaker declared decay.
    """
    if len(c) != len(d):
        raise ValueError("sequences must have equal length")
    full = np.convolve(c.values, d.values)
    return DecaySequence(values=full[: len(c)], q=min(c.q, d.q))


@dataclass
class KaramataReport:
    branch: str               # "tail" (alpha < q), "head" (alpha > q), "critical"
    alpha: float
    q: float
    sup_constant: float
    input_tail_constant: float

    def __str__(self):
        return (
            f"{self.branch} sum, alpha={self.alpha}, q={self.q}: "
            f"sup constant {self.sup_constant:.4g}"
        )


def karamata_check(c: DecaySequence, alpha: float, q: float, branch: str | None = None) -> KaramataReport:
    """Regularly varying sum constants for weights h^alpha against c.

    alpha < q compares the tail sum over h > n to n^(alpha-q); alpha > q the
    head sum over h < n; at alpha = q the head sum is compared to log n.  All
    sums start at h = 1.  A requested branch that contradicts the exponents is
    rejected rather than silently recomputed.
    """
    inferred = "critical" if alpha == q else ("tail" if alpha < q else "head")
    if branch is not None and branch != inferred:
        raise ValueError(f"alpha={alpha}, q={q} selects the {inferred!r} branch, not {branch!r}")
    N = len(c)
    h = np.arange(1, N, dtype=float)
    weighted = h**alpha * c.values[1:N]
    if inferred == "tail":
        # suff[k] = sum of weighted[j] over j >= k, i.e. over h >= k + 1
        suff = np.concatenate((np.cumsum(weighted[::-1])[::-1], [0.0]))
        n = np.arange(1, N)
        sup = float(np.max(n ** (q - alpha) * suff[n])) if n.size else 0.0
    elif inferred == "head":
        head = np.concatenate(([0.0], np.cumsum(weighted)))  # head[k] = sum_{h<=k}
        n = np.arange(2, N + 1)
        sup = float(np.max(n ** (q - alpha) * head[n - 1])) if n.size else 0.0
    else:
        head = np.concatenate(([0.0], np.cumsum(weighted)))
        n = np.arange(2, N + 1)
        sup = float(np.max(head[n - 1] / np.log(n))) if n.size else 0.0
    return KaramataReport(
        branch=inferred,
        alpha=alpha,
        q=q,
        sup_constant=sup,
        input_tail_constant=c.tail_sum_constant(q),
    )


@dataclass
class MaximalFunction:
    """Exact centered-window maxima of |u| on an index range around its support."""

    n: np.ndarray
    values: np.ndarray
    support_len: int
    l1: float

    def __call__(self, idx: int) -> float:
        pos = idx - int(self.n[0])
        if pos < 0 or pos >= self.n.size:
            raise IndexError("index outside the evaluated range")
        return float(self.values[pos])

    def norm(self, p: float) -> float:
        """Upper bound on the full l^p norm: evaluated range plus the exact
        far-field envelope l1 / (2d+1) beyond it."""
        if p <= 1:
            raise ValueError("the maximal operator is only bounded for p > 1")
        core = float(np.sum(self.values**p))
        d0 = min(int(self.n[0]) * -1, int(self.n[-1]) - (self.support_len - 1)) + 1
        d0 = max(d0, 1)
        # sum over |far n| of (l1/(2d+1))^p, d >= d0, both sides
        tail = 2.0 * self.l1**p * (2.0 * d0 - 1.0) ** (1.0 - p) / (2.0 * (p - 1.0))
        return float((core + tail) ** (1.0 / p))


def maximal_function(u, pad: int | None = None) -> MaximalFunction:
    """Window maxima sup_h avg(|u|) over [n-h, n+h], exact for each n.

    The sequence is treated as supported on 0..len(u)-1 and zero outside; the
    evaluation range extends `pad` indices beyond the support (default: one
    support length) and the sup over h is exact because enlarging a window
    past full coverage only dilutes it.
    """
    u = np.abs(np.asarray(u, dtype=float))
    L = u.size
    if L == 0:
        raise ValueError("empty sequence")
    pad = L if pad is None else int(pad)
    ns = np.arange(-pad, L + pad)
    cs = np.concatenate(([0.0], np.cumsum(u)))
    h_top = int(max(ns[-1], L - 1 - ns[0]))
    # seed with the h = 0 window directly from u: the cumulative-sum
    # difference would smear it by cancellation, and Mu >= |u| must be exact
    best = np.zeros(ns.size)
    best[pad : pad + L] = u
    for h in range(1, h_top + 1):
        lo = np.clip(ns - h, 0, L)
        hi = np.clip(ns + h + 1, 0, L)
        np.maximum(best, (cs[hi] - cs[lo]) / (2.0 * h + 1.0), out=best)
    return MaximalFunction(n=ns, values=best, support_len=L, l1=float(cs[-1]))


@dataclass
class IneqReport:
    """One inequality evaluation with its truncation enclosure."""

    lhs_core: float
    lhs_tail_bound: float
    rhs: float
    stored_h: int

    @property
    def ratio(self) -> float:
        if self.rhs == 0.0:
            return 0.0
        return self.lhs_core / self.rhs

    @property
    def ratio_upper(self) -> float:
        if self.rhs == 0.0:
            return 0.0
        return (self.lhs_core + self.lhs_tail_bound) / self.rhs


def _trim_support(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    nz = np.nonzero(u)[0]
    if nz.size == 0:
        return u[:0]
    return u[nz[0] : nz[-1] + 1]


def _window_power_sums(u: np.ndarray, h_count: int, power: float) -> np.ndarray:
    """G[h] = sum over all n of |sum_{i=n-h}^{n+h} u_i|^power, exact.

    Once the window is wider than the support (h >= L - 1) the sum is affine
    in h: the sweep sees every prefix total once, the full total 2h - L + 2
    times, and every complement-of-prefix once.
    """
    L = u.size
    cs = np.concatenate(([0.0], np.cumsum(u)))
    G = np.empty(h_count)
    for h in range(min(h_count, L - 1)):
        n = np.arange(-h, L + h)
        lo = np.clip(n - h, 0, L)
        hi = np.clip(n + h + 1, 0, L)
        G[h] = float(np.sum(_powabs(cs[hi] - cs[lo], power)))
    if h_count > L - 1:
        alpha, beta = _affine_window_coeffs(u, power)
        h = np.arange(L - 1, h_count, dtype=float)
        G[L - 1 :] = alpha + beta * (2.0 * h - L + 2.0)
    return G


def _affine_window_coeffs(u: np.ndarray, power: float) -> tuple[float, float]:
    cs = np.cumsum(u)
    total = cs[-1]
    alpha = float(np.sum(_powabs(cs[:-1], power)) + np.sum(_powabs(total - cs[:-1], power)))
    return alpha, float(_powabs(np.array([total]), power)[0])


def check_ineq_q_gt_2(a: DecaySequence, u, q: float) -> IneqReport:
    """Window inequality for q > 2: a-weighted power sums of centered window
    totals against the squared l2 norm to the power q - 1.

    The h-sum over the stored coefficients is exact (window sums via
    cumulative sums); beyond the stored range each term is enclosed by the
    uniform bound |window total| <= l1(u) on at most L + 2h indices, combined
    with the declared decay of a.  That needs a declared exponent above 2,
    which the stated tail hypothesis (one full order above q) guarantees.
    """
    if q <= 2.0:
        raise ValueError("this inequality requires q > 2; it fails at q = 2")
    if a.q < q + 1.0 - 1e-12:
        raise ValueError("coefficient tail too heavy for the requested q")
    return _window_ineq_core(a, u, power=2.0 * q - 2.0, rhs_power=q - 1.0)


def critical_window_probe(a: DecaySequence, u) -> IneqReport:
    """The same window functional at the failure endpoint q = 2 (power 2).

    No boundedness is claimed; the ratio is expected to grow with the input
    length, and callers use this only to observe that growth.
    """
    return _window_ineq_core(a, u, power=2.0, rhs_power=1.0)


def _window_ineq_core(a: DecaySequence, u, power: float, rhs_power: float) -> IneqReport:
    u = _trim_support(u)
    rhs = float(np.sum(u * u)) ** rhs_power
    if u.size == 0:
        return IneqReport(lhs_core=0.0, lhs_tail_bound=0.0, rhs=rhs, stored_h=len(a))
    L = u.size
    H = len(a)
    G = _window_power_sums(u, H, power)
    lhs = float(np.dot(a.values, G))
    # tail over h >= H: up to the affine threshold the crude envelope
    # |window| <= l1 on L + 2h indices, summed term by term against the
    # declared decay; past it the exact affine form, with the h-sums
    # enclosed by integral comparison (needs declared exponent above 2)
    C = a.realized_constant
    aq = a.q
    if aq <= 2.0:
        tail = float("inf")
    else:
        tail = 0.0
        if H < L - 1:
            hg = np.arange(H, L - 1, dtype=float)
            l1p = float(np.sum(np.abs(u))) ** power
            tail += C * l1p * float(np.sum((L + 2.0 * hg) * (hg + 1.0) ** (-aq)))
        alpha, beta = _affine_window_coeffs(u, power)
        Hg = max(H, L - 1)
        s0 = Hg ** (1.0 - aq) / (aq - 1.0)         # >= sum_{h>=Hg} (h+1)^-aq
        s1 = Hg ** (2.0 - aq) / (aq - 2.0)         # >= sum_{h>=Hg} (h+1)^(1-aq)
        tail += C * (alpha * s0 + 2.0 * beta * s1)
    return IneqReport(lhs_core=lhs, lhs_tail_bound=tail, rhs=rhs, stored_h=H)


@lru_cache(maxsize=4096)
def _kernel_row(h: int, half_width: int, eps: float) -> np.ndarray:
    m = np.abs(np.arange(-half_width, half_width + 1, dtype=float))
    row = np.minimum((h + 1.0) / (1.0 + m ** (1.0 + eps)), 1.0 / (1.0 + m**eps))
    row.setflags(write=False)
    return row


def check_ineq_q_lt_2(a: DecaySequence, u, q: float, eps: float) -> IneqReport:
    """Two-branch kernel inequality: a-weighted q-th power sums of the
    smoothed sequence against the l^q norm.

    For each stored h the kernel convolution is computed exactly on a range
    wide enough that everything discarded is covered by the far branch of the
    kernel; the two enclosures are (i) the spatial tail, via the far-branch
    envelope, and (ii) the h-tail beyond the stored coefficients, via the
    kernel mass bound C (1+h)^(1-eps) and the declared decay of a, which must
    jointly leave a convergent exponent.  Requires eps in (0, 1), the regime
    the enclosure constants are derived for.
    """
    if q <= 1.0:
        raise ValueError("requires q > 1")
    if not (0.0 < eps < 1.0):
        raise ValueError("audited enclosures implemented for eps in (0, 1)")
    u = _trim_support(u)
    rhs = float(np.sum(_powabs(u, q)))
    if u.size == 0:
        return IneqReport(lhs_core=0.0, lhs_tail_bound=0.0, rhs=rhs, stored_h=len(a))
    L = u.size
    H = len(a)
    l1 = float(np.sum(np.abs(u)))
    lhs = 0.0
    spatial_tail = 0.0
    qe = q * (1.0 + eps)
    for h in range(H):
        ah = a.values[h]
        if ah == 0.0:
            continue
        # the power sum is taken exactly on |n| within D of the support,
        # which needs the kernel complete out to D + L - 1; the conv edges
        # beyond that range see a clipped kernel and are discarded in favor
        # of the analytic far-field envelope (h+1) d^-(1+eps)
        D = h + L
        W = D + L - 1
        row = _kernel_row(h, W, eps)
        if L * row.size <= 2 * 10**5:
            v = np.convolve(u, row)
        else:
            v = fftconvolve(u, row)
        core = v[W - D : W - D + L + 2 * D]
        lhs += ah * float(np.sum(_powabs(core, q)))
        spatial_tail += ah * 2.0 * l1**q * (h + 1.0) ** q * D ** (1.0 - qe) / (qe - 1.0)
    # h-tail: kernel mass <= kappa (1+h)^(1-eps), power-sum bound via the
    # coefficient inequality, then integral comparison in h
    kappa = 3.0 + 2.0 / (1.0 - eps) + 2.0 ** (1.0 + eps) / eps
    e0 = a.q - q * (1.0 - eps)
    if e0 <= 1.0:
        h_tail = float("inf")
    else:
        h_tail = a.realized_constant * kappa**q * rhs * H ** (1.0 - e0) / (e0 - 1.0)
    return IneqReport(
        lhs_core=lhs, lhs_tail_bound=spatial_tail + h_tail, rhs=rhs, stored_h=H
    )


def stable_power_check(c, u, p: float):
    """Both sides of the weighted power-mean inequality
    |sum c_n u_n|^p <= (sum c_n)^(p-1) * sum c_n |u_n|^p, asserted up to
    1e-12 slack, returned as (lhs, rhs)."""
    if p < 1.0:
        raise ValueError("requires p >= 1")
    c = np.asarray(c, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(c < 0):
        raise ValueError("weights must be nonnegative")
    if c.shape != u.shape:
        raise ValueError("shape mismatch")
    lhs = float(np.abs(np.dot(c, u))) ** p
    total = float(np.sum(c))
    rhs = total ** (p - 1.0) * float(np.dot(c, _powabs(u, p)))
    if lhs > rhs + 1e-12 * max(1.0, abs(rhs)):
        raise AssertionError(f"power-mean inequality violated: {lhs} > {rhs}")
    return lhs, rhs
