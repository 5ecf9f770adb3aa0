"""Renewal towers with prescribed return-time tails, plus the intermittent interval map.

The model space is a tower over a finite base: a point sits at level ``i`` of a
column of height ``h``, climbs one level per step, and on leaving the top lands
back at level 0 of a freshly drawn column.  Column heights are drawn i.i.d.
from the return-time law at every base visit, which reproduces the orbit
statistics of the deterministic full-branch tower for any observable that is a
function of (height, level, base atom).  All measures are exact rational
functions of the height law, so simulation output can be checked against
closed-form level masses rather than against other Monte Carlo runs.

Heights are truncated at ``h_max`` with the remaining tail mass lumped onto the
cap.  The lumped mass is stored on the model so downstream reports can audit
the truncation bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ReturnTimeOverflow",
    "TailLaw",
    "TowerModel",
    "TowerPoint",
    "LsvParams",
    "build_tower",
    "build_tower_from_probs",
    "lsv_map",
    "lsv_return_time",
    "lsv_return_times",
    "birkhoff_sum",
]


class ReturnTimeOverflow(RuntimeError):
    """An orbit failed to return to the base within the iteration cap.

    Raised by the interval-map return-time routines when a point is stuck
    numerically near the neutral fixed point.  Callers should resample the
    starting point or retry under the extended precision policy.
    """

    def __init__(self, x, cap):
        super().__init__(f"no return within {cap} steps from x={x!r}")
        self.x = x
        self.cap = cap


@dataclass(frozen=True)
class TailLaw:
    """Exact return-time law ``tau(n) = min(1, C n^-q + C2 n^-(q+epsilon))``.

    ``tau(n)`` is the probability of a return time >= n; it equals 1 up to a
    crossover index (so tau(1) = 1 always holds) and follows the prescribed
    power envelope beyond it.  The induced probabilities are
    ``p_h = tau(h) - tau(h+1)`` for ``h < h_max`` and ``p_{h_max} = tau(h_max)``,
    i.e. all mass beyond the truncation height is lumped onto the cap.

    Parameters
    ----------
    q : float
        Tail index, must exceed 1 so the mean return time is finite.
    C : float
        Leading tail coefficient.
    epsilon : float
        Second-order correction exponent; 0 means a pure power law.
    C2 : float
        Coefficient of the ``n^-(q+epsilon)`` correction term.  Requires
        ``epsilon > 0`` when nonzero.
    h_max : int
        Truncation height for the lumped law.
    """

    q: float
    C: float = 1.0
    epsilon: float = 0.0
    C2: float = 0.0
    h_max: int = 10**6

    def __post_init__(self):
        if not self.q > 1:
            raise ValueError(f"tail index q must exceed 1, got {self.q}")
        if not self.C > 0:
            raise ValueError(f"tail constant C must be positive, got {self.C}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.C2 < 0:
            raise ValueError("second-order coefficient must be nonnegative")
        if self.C2 > 0 and self.epsilon == 0:
            raise ValueError("a nonzero C2 needs epsilon > 0")
        if int(self.h_max) != self.h_max or self.h_max < 1:
            raise ValueError(f"h_max must be a positive integer, got {self.h_max}")

    def raw(self, n):
        """Un-clipped envelope ``C n^-q + C2 n^-(q+epsilon)``."""
        n = np.asarray(n, dtype=float)
        out = self.C * n ** (-self.q)
        if self.C2:
            out = out + self.C2 * n ** (-(self.q + self.epsilon))
        return out

    def tau(self, n):
        """P(return time >= n) for integer n >= 1 (vectorized)."""
        n = np.asarray(n)
        if np.any(n < 1):
            raise ValueError("tau is defined for n >= 1")
        return np.minimum(1.0, self.raw(n))

    @property
    def crossover(self) -> int:
        """Smallest n with tau(n) < 1; tau saturates at 1 strictly below it."""
        lo, hi = 1, 2
        while hi <= self.h_max and float(self.raw(hi)) >= 1.0:
            lo, hi = hi, hi * 2
        hi = min(hi, self.h_max + 1)
        while lo + 1 < hi:
            mid = (lo + hi) // 2
            if float(self.raw(mid)) >= 1.0:
                lo = mid
            else:
                hi = mid
        if float(self.raw(lo)) < 1.0:
            return lo
        return hi

    def probs(self) -> np.ndarray:
        """Height probabilities, index h in [0, h_max], p[0] = 0."""
        n = np.arange(1, self.h_max + 2)
        t = self.tau(np.minimum(n, self.h_max))
        p = np.empty(self.h_max + 1)
        p[0] = 0.0
        p[1:] = t[:-1] - t[1:]
        p[self.h_max] = t[self.h_max - 1]  # lumped cap mass = tau(h_max)
        return p

    def realized_constant(self) -> float:
        """sup of n^q tau(n) over the non-saturated range [crossover, h_max]."""
        n = np.arange(self.crossover, self.h_max + 1, dtype=float)
        if n.size == 0:
            return float("nan")
        return float(np.max(n**self.q * self.tau(n)))

    def lumped_mass(self) -> float:
        """Mass the un-truncated envelope carries above h_max, folded onto the cap.

        Reported on the model so experiments can audit truncation bias.
        """
        return float(self.raw(self.h_max + 1).clip(max=1.0))


@dataclass(frozen=True)
class TowerPoint:
    """A tower state: column height, level within the column, base atom.

    ``base_state`` is the atom of the base from which the current excursion
    departed; for a level-0 point it is the atom containing the point itself.
    """

    height: int
    level: int
    base_state: int = 0


class TowerModel:
    """Immutable renewal tower with exact stationary-measure arithmetic.

    Do not construct directly; use :func:`build_tower` or
    :func:`build_tower_from_probs`.  All sampling methods take an explicit
    ``numpy.random.Generator`` so replicas can run on independent deterministic
    streams; the model itself carries no mutable state after construction.
    """

    def __init__(self, p, tail, base_states, rows, nu):
        p = np.asarray(p, dtype=float)
        if p.ndim != 1 or p[0] != 0.0:
            raise ValueError("p must be 1-d with p[0] = 0")
        if np.any(p < -1e-15):
            raise ValueError("negative height probability")
        total = float(p.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"height probabilities sum to {total}, not 1")
        self.p = p
        self.p.setflags(write=False)
        self.tail = tail
        self.base_states = int(base_states)
        self.h_max = p.size - 1
        self.heights = np.nonzero(p)[0]
        if self.heights.size == 0:
            raise ValueError("no height carries positive mass")

        h = np.arange(p.size, dtype=float)
        self.mean_return = float(np.dot(h, p))
        self.mu_Y = 1.0 / self.mean_return
        self.lumped_mass = tail.lumped_mass() if tail is not None else 0.0

        # tau_seq[n] = P(phi >= n) for n in [0, h_max+1]; tau_seq[h_max+1] = 0.
        t = np.zeros(p.size + 1)
        t[:-1] = np.cumsum(p[::-1])[::-1]
        self._tau_seq = t
        self._tau_seq.setflags(write=False)
        # suffix sums of tau_seq for level-set masses.
        ts = np.zeros(p.size + 2)
        ts[:-1] = np.cumsum(t[::-1])[::-1]
        self._tau_suffix = ts

        ph = p[self.heights]
        self._cum_p = np.cumsum(ph)
        self._col_cum = np.cumsum(self.heights * ph)

        if base_states == 1:
            self.rows = None
            self.nu = np.ones(1)
        else:
            rows = np.asarray(rows, dtype=float)
            if rows.shape != (p.size, base_states, base_states):
                raise ValueError("transition rows have the wrong shape")
            sums = rows[self.heights].sum(axis=2)
            if np.any(np.abs(sums - 1.0) > 1e-12) or np.any(rows < 0):
                raise ValueError("each base-transition row must be stochastic")
            self.rows = rows
            self.rows.setflags(write=False)
            self.nu = np.asarray(nu, dtype=float)
        self.nu.setflags(write=False)

    # -- exact measure arithmetic -------------------------------------------

    def tau_seq(self, n):
        """mu_Y(phi >= n), exact suffix sums of the height law (vectorized)."""
        n = np.asarray(n)
        return self._tau_seq[np.clip(n, 0, self.h_max + 1)]

    def level_mass(self, h, i, s=0):
        """mu of the single cell at (height h, level i, atom s)."""
        h = np.asarray(h)
        i = np.asarray(i)
        if np.any((i < 0) | (i >= h)):
            raise ValueError("level out of range for height")
        return self.nu[s] * self.p[h] * self.mu_Y

    def column_mass(self, h):
        """mu of the whole column(s) of height h, all atoms together."""
        h = np.asarray(h)
        return h * self.p[h] * self.mu_Y

    def mass_level_ge(self, m: int) -> float:
        """mu of the set of points at level >= m; equals mu_Y sum_{n>m} tau(n)."""
        if m < 0:
            return 1.0
        return self.mu_Y * float(self._tau_suffix[m + 1])

    def mass_height_ge(self, m: int) -> float:
        """mu of the union of columns with height >= m (every level counted)."""
        hs = self.heights[self.heights >= m]
        return self.mu_Y * float(np.dot(hs, self.p[hs]))

    # -- sampling ------------------------------------------------------------

    def sample_return_time(self, rng, size=None, lo: int = 1, hi: int | None = None):
        """Draw heights from the return law, optionally conditioned on [lo, hi].

        Inverse CDF over the precomputed cumulative table; conditioning
        renormalizes exactly, so stratified estimators stay unbiased.
        """
        c = self._cum_p
        a = np.searchsorted(self.heights, lo)
        base = 0.0 if a == 0 else c[a - 1]
        top = c[-1] if hi is None else c[np.searchsorted(self.heights, hi, side="right") - 1]
        if top <= base:
            raise ValueError(f"no mass in height range [{lo}, {hi}]")
        u = rng.random(size) * (top - base) + base
        idx = np.searchsorted(c, u, side="right")
        out = self.heights[np.minimum(idx, self.heights.size - 1)]
        return out if size is not None else int(out)

    def sample_stationary(self, rng, size=None):
        """Draw (height, level, atom) from mu: column by h p_h, level uniform."""
        n = 1 if size is None else size
        u = rng.random(n) * self._col_cum[-1]
        h = self.heights[np.searchsorted(self._col_cum, u, side="right").clip(max=self.heights.size - 1)]
        i = np.minimum((rng.random(n) * h).astype(np.int64), h - 1)
        if self.base_states == 1:
            s = np.zeros(n, dtype=np.int64)
        else:
            s = np.searchsorted(np.cumsum(self.nu), rng.random(n), side="right")
            s = np.minimum(s, self.base_states - 1)
        if size is None:
            return int(h[0]), int(i[0]), int(s[0])
        return h, i, s

    def sample_stationary_point(self, rng) -> TowerPoint:
        h, i, s = self.sample_stationary(rng)
        return TowerPoint(h, i, s)

    def iterate(self, point: TowerPoint, rng) -> TowerPoint:
        """One step of the tower map: climb, or return to a fresh column."""
        h, i, s = point.height, point.level, point.base_state
        if not 1 <= h <= self.h_max or self.p[h] == 0.0:
            raise ValueError(f"invalid tower point {point}")
        if not 0 <= i < h or not 0 <= s < self.base_states:
            raise ValueError(f"invalid tower point {point}")
        if i + 1 < h:
            return TowerPoint(h, i + 1, s)
        if self.base_states == 1:
            s2 = 0
        else:
            r = np.cumsum(self.rows[h, s])
            s2 = int(np.searchsorted(r, rng.random(), side="right").clip(max=self.base_states - 1))
        return TowerPoint(int(self.sample_return_time(rng)), 0, s2)

    # -- misc ----------------------------------------------------------------

    def base_transition_matrix(self) -> np.ndarray:
        """P[s, s'] = probability the next excursion departs from atom s'."""
        if self.base_states == 1:
            return np.ones((1, 1))
        return np.einsum("h,hst->st", self.p[self.heights], self.rows[self.heights])

    def __repr__(self):
        return (
            f"TowerModel(S={self.base_states}, h_max={self.h_max}, "
            f"mu_Y={self.mu_Y:.6g}, mean_return={self.mean_return:.6g}, "
            f"lumped={self.lumped_mass:.3g})"
        )


def _stationary_left_vector(P: np.ndarray) -> np.ndarray:
    """Left fixed probability vector of a stochastic matrix (small S only)."""
    w, V = np.linalg.eig(P.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    if abs(w[k] - 1.0) > 1e-10:
        raise ValueError("base transition matrix has no eigenvalue 1")
    nu = np.real(V[:, k])
    nu = np.abs(nu)
    s = nu.sum()
    if s <= 0:
        raise ValueError("degenerate stationary vector")
    return nu / s


def _expand_rows(transition_rule, h_max, S, heights) -> np.ndarray:
    rows = np.zeros((h_max + 1, S, S))
    if transition_rule is None:
        rows[:] = 1.0 / S
        return rows
    arr = np.asarray(transition_rule, dtype=float) if not callable(transition_rule) else None
    if arr is not None:
        if arr.shape == (S, S):
            rows[:] = arr
        elif arr.shape == (h_max + 1, S, S):
            rows[:] = arr
        else:
            raise ValueError("transition rows must be (S,S) or (h_max+1,S,S)")
        return rows
    for h in heights:
        for s in range(S):
            rows[h, s] = np.asarray(transition_rule(int(h), s), dtype=float)
    return rows


def build_tower(tail: TailLaw, base_states: int = 1, transition_rule=None) -> TowerModel:
    """Build the Kac-normalized tower for a tail law.

    For ``base_states > 1`` the return law stays the height law of ``tail``
    (heights are drawn independently of the atom), while ``transition_rule``
    prescribes, per height and departure atom, the distribution of the landing
    atom.  It may be a callable ``(h, s) -> row``, an (S, S) array used for all
    heights, or a full (h_max+1, S, S) array; omitted means uniform rows.
    """
    if base_states < 1:
        raise ValueError("base_states must be >= 1")
    p = tail.probs()
    if base_states == 1:
        return TowerModel(p, tail, 1, None, None)
    heights = np.nonzero(p)[0]
    rows = _expand_rows(transition_rule, tail.h_max, base_states, heights)
    P = np.einsum("h,hst->st", p[heights], rows[heights])
    nu = _stationary_left_vector(P)
    return TowerModel(p, tail, base_states, rows, nu)


def build_tower_from_probs(heights, probs, base_states: int = 1, transition_rule=None) -> TowerModel:
    """Build a tower from an explicit finite height law (no tail family).

    ``heights`` and ``probs`` are parallel sequences; probabilities must sum
    to 1 within 1e-12.  Useful for hand-checkable models in tests.
    """
    heights = np.asarray(heights, dtype=np.int64)
    probs = np.asarray(probs, dtype=float)
    if heights.shape != probs.shape or heights.ndim != 1:
        raise ValueError("heights and probs must be parallel 1-d sequences")
    if np.any(heights < 1):
        raise ValueError("heights must be >= 1")
    if abs(probs.sum() - 1.0) > 1e-12:
        raise ValueError("explicit height probabilities must sum to 1")
    h_max = int(heights.max())
    p = np.zeros(h_max + 1)
    np.add.at(p, heights, probs)
    if base_states == 1:
        return TowerModel(p, None, 1, None, None)
    hs = np.nonzero(p)[0]
    rows = _expand_rows(transition_rule, h_max, base_states, hs)
    P = np.einsum("h,hst->st", p[hs], rows[hs])
    nu = _stationary_left_vector(P)
    return TowerModel(p, None, base_states, rows, nu)


# -- the intermittent interval map ------------------------------------------


@dataclass(frozen=True)
class LsvParams:
    """Parameters of the intermittent map x -> x(1 + 2^gamma x^gamma) below 1/2.

    gamma in (0, 1) gives a finite-mean return time to [1/2, 1] with tail index
    q = 1/gamma.  gamma = 1 is accepted for map arithmetic (the formula is
    fine) but sits on the infinite-mean boundary, so no TailLaw can be fitted
    to it.  ``precision`` selects the float policy: "standard" runs plain
    float64; "extended" switches to numpy long double, which keeps orbits
    honest much closer to the neutral fixed point at 0.
    """

    gamma: float
    precision: str = "standard"

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.precision not in ("standard", "extended"):
            raise ValueError("precision must be 'standard' or 'extended'")

    @property
    def q(self) -> float:
        return 1.0 / self.gamma

    @property
    def dtype(self):
        return np.longdouble if self.precision == "extended" else np.float64


def lsv_map(x, params: LsvParams):
    """One step of the interval map; accepts scalars or arrays in [0, 1]."""
    dt = params.dtype
    x = np.asarray(x, dtype=dt)
    if np.any((x < 0) | (x > 1)):
        raise ValueError("lsv_map domain is [0, 1]")
    g = dt(params.gamma)
    lo = x * (1 + dt(2.0) ** g * x**g)
    out = np.where(x < 0.5, lo, 2 * x - 1)
    return out if out.ndim else out[()]


def lsv_return_time(x: float, params: LsvParams, cap: int = 10**7) -> int:
    """First i > 0 with T^i(x) in [1/2, 1], for x already in [1/2, 1]."""
    if not 0.5 <= x <= 1.0:
        raise ValueError("return time is defined for x in [1/2, 1]")
    y = params.dtype(x)
    for i in range(1, cap + 1):
        y = lsv_map(y, params)
        if y >= 0.5:
            return i
    raise ReturnTimeOverflow(x, cap)


def lsv_return_times(xs, params: LsvParams, cap: int = 10**7) -> np.ndarray:
    """Vectorized first-return times for a batch of points in [1/2, 1].

    Iterates the whole active set in lockstep and compacts it as points
    return, so a handful of slow orbits does not cost full-width passes.
    Raises ReturnTimeOverflow if any point exceeds the cap.
    """
    xs = np.asarray(xs, dtype=params.dtype)
    if np.any((xs < 0.5) | (xs > 1.0)):
        raise ValueError("all starting points must lie in [1/2, 1]")
    out = np.zeros(xs.shape, dtype=np.int64)
    idx = np.arange(xs.size)
    y = lsv_map(xs, params)
    step = 1
    while idx.size:
        if step > cap:
            raise ReturnTimeOverflow(float(xs[idx[0]]), cap)
        done = y >= 0.5
        if np.any(done):
            out[idx[done]] = step
            keep = ~done
            idx = idx[keep]
            y = y[keep]
        if idx.size:
            y = lsv_map(y, params)
        step += 1
    return out


def birkhoff_sum(model: TowerModel, observable, n: int, rng=None, start=None, script=None) -> float:
    """Reference Birkhoff sum along one orbit (slow scalar path, for checks).

    With ``script`` given as a sequence of heights, the orbit consumes those
    heights deterministically at each base return instead of drawing from the
    model, so hand-computed values can be pinned in tests.  ``start`` defaults
    to a stationary draw (requires ``rng``).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if start is None:
        if rng is None:
            raise ValueError("need an rng for a stationary start")
        start = model.sample_stationary_point(rng)
    pt = start
    script_it = iter(script) if script is not None else None
    total = 0.0
    for k in range(n):
        total += float(observable.value(pt.height, pt.level))
        if k == n - 1:
            break
        h, i, s = pt.height, pt.level, pt.base_state
        if i + 1 < h:
            pt = TowerPoint(h, i + 1, s)
        elif script_it is not None:
            pt = TowerPoint(int(next(script_it)), 0, s)
        else:
            pt = model.iterate(pt, rng)
    return total
