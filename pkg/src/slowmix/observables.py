"""Observables on the tower and separately Lipschitz functionals of orbit blocks.

Two concrete observable families cover everything the experiments need:
column observables, whose value depends only on the column height (threshold
indicators, constants), and level observables, whose value depends only on the
level within the column (profiles converging to a constant, the base
indicator).  Both expose exact partial sums along a climb, so Birkhoff sums
decompose into closed-form excursion pieces with no per-step loop.

Centering is exact: constructors subtract the mean computed from the model's
level masses, and ``mean_residual`` lets tests confirm the result is zero to
float precision.

The metric on the finite alphabet of (height, level) cells is discrete with
diameter 1, so the Lipschitz seminorm of any observable is its oscillation and
the norm ``sup + lip`` reduces to computable quantities.  Functional Lip
profiles are stated against that same metric and are checked by coordinate
fuzzing rather than trusted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .towers import TowerModel, TowerPoint

__all__ = [
    "Observable",
    "ColumnObservable",
    "LevelObservable",
    "InducedObservable",
    "SeparatelyLipschitzFunctional",
    "tail_indicator_observable",
    "stable_class_observable",
    "base_indicator_observable",
    "level_profile_observable",
    "constant_observable",
    "induce",
    "make_functional",
    "fuzz_lip_profile",
    "birkhoff_sum_by_excursions",
]


class Observable:
    """Common interface: vectorized pointwise values and exact climb sums."""

    kind = "abstract"
    mean_offset = 0.0

    def value(self, h, i):
        raise NotImplementedError

    def partial_sum(self, h, a, b):
        """Sum of values at levels a..b-1 of a height-h column (vectorized)."""
        raise NotImplementedError

    def induced_values(self) -> np.ndarray:
        """Array F with F[h] = sum of values over a full height-h column."""
        raise NotImplementedError

    def mean_residual(self, model: TowerModel) -> float:
        """Integral of the observable against mu, from exact level masses."""
        F = self.induced_values()
        return model.mu_Y * float(np.dot(model.p[model.heights], F[model.heights]))

    @property
    def sup_norm(self) -> float:
        raise NotImplementedError

    @property
    def osc(self) -> float:
        """Oscillation sup f - inf f; the Lipschitz constant at alphabet diam 1."""
        raise NotImplementedError

    @property
    def lip_norm(self) -> float:
        """sup|f| plus the Lipschitz part.

        Values are constant on each partition cell, so the within-cell
        Lipschitz part vanishes and the norm collapses to the sup.
        """
        return self.sup_norm


@dataclass(frozen=True)
class ColumnObservable(Observable):
    """Value depends only on the column height: f(h, i) = val[h]."""

    val: np.ndarray
    kind: str = "column"
    mean_offset: float = 0.0
    hmin: int | None = None
    degenerate: bool = False

    def value(self, h, i=None):
        return self.val[np.asarray(h)]

    def partial_sum(self, h, a, b):
        h = np.asarray(h)
        return (np.asarray(b) - np.asarray(a)) * self.val[h]

    def induced_values(self):
        return np.arange(self.val.size) * self.val

    @property
    def sup_norm(self):
        return float(np.max(np.abs(self.val[1:]))) if self.val.size > 1 else 0.0

    @property
    def osc(self):
        v = self.val[1:]
        return float(v.max() - v.min()) if v.size else 0.0


@dataclass(frozen=True)
class LevelObservable(Observable):
    """Value depends only on the level: f(h, i) = w[i], with prefix sums cached."""

    w: np.ndarray
    wcum: np.ndarray
    kind: str = "level"
    mean_offset: float = 0.0

    def value(self, h, i):
        return self.w[np.asarray(i)]

    def partial_sum(self, h, a, b):
        return self.wcum[np.asarray(b)] - self.wcum[np.asarray(a)]

    def induced_values(self):
        return self.wcum.copy()

    @property
    def sup_norm(self):
        return float(np.max(np.abs(self.w)))

    @property
    def osc(self):
        return float(self.w.max() - self.w.min())


def _level_obs(model: TowerModel, v: np.ndarray, offset=None) -> LevelObservable:
    if offset is None:
        # E[f] = mu_Y * sum_h p_h * (prefix sum of v up to h).
        vc = np.concatenate(([0.0], np.cumsum(v)))
        offset = model.mu_Y * float(np.dot(model.p[model.heights], vc[model.heights]))
    w = v - offset
    wcum = np.concatenate(([0.0], np.cumsum(w)))
    w.setflags(write=False)
    wcum.setflags(write=False)
    return LevelObservable(w=w, wcum=wcum, mean_offset=float(offset))


def tail_indicator_observable(model: TowerModel, n: int) -> ColumnObservable:
    """Indicator of the columns of height >= n, centered by a constant off them.

    The observable equals exactly 1 on the tall columns, so a Birkhoff sum of
    length n started low in a column of height >= 2n is exactly n; the
    complementary constant -mu(A)/(1-mu(A)) makes the mean zero without
    touching the value on the set.  Degenerate thresholds (no tall column, or
    nothing but tall columns) yield the zero observable with a flag.
    """
    if n < 1:
        raise ValueError("threshold must be >= 1")
    mu_A = model.mass_height_ge(n)
    val = np.zeros(model.h_max + 1)
    if mu_A <= 0.0 or mu_A >= 1.0:
        return ColumnObservable(val=val, kind="threshold", hmin=n, degenerate=True)
    val[n:] = 1.0
    val[1:n] = -mu_A / (1.0 - mu_A)
    val.setflags(write=False)
    return ColumnObservable(val=val, kind="threshold", hmin=n, mean_offset=0.0)


def stable_class_observable(model: TowerModel, limit: float = 1.0, profile=None) -> LevelObservable:
    """Centered level profile converging to ``limit`` up the tower.

    Default profile v(i) = limit * (1 - 1/(i+1)).  Membership in the limit
    class only needs convergence to a nonzero constant along high levels;
    callers may pass any such profile as an array or callable.
    """
    if limit == 0:
        raise ValueError("the limit value must be nonzero")
    i = np.arange(model.h_max)
    if profile is None:
        v = limit * (1.0 - 1.0 / (i + 1.0))
    elif callable(profile):
        v = np.asarray(profile(i), dtype=float)
    else:
        v = np.asarray(profile, dtype=float)
        if v.size != model.h_max:
            raise ValueError("profile array must cover levels 0..h_max-1")
    return _level_obs(model, v)


def base_indicator_observable(model: TowerModel) -> LevelObservable:
    """f = 1 - (base indicator)/mu(Y); induces phi - mean return on the base."""
    v = np.ones(model.h_max)
    v[0] -= 1.0 / model.mu_Y
    return _level_obs(model, v, offset=0.0)


def level_profile_observable(model: TowerModel, v) -> LevelObservable:
    """Centered observable from an arbitrary level profile (array or callable)."""
    i = np.arange(model.h_max)
    arr = np.asarray(v(i) if callable(v) else v, dtype=float)
    if arr.shape != i.shape:
        raise ValueError("profile must cover levels 0..h_max-1")
    return _level_obs(model, arr.copy())


def constant_observable(model: TowerModel, c: float = 1.0) -> ColumnObservable:
    """A constant observable; identically zero once centered."""
    val = np.zeros(model.h_max + 1)
    return ColumnObservable(val=val, kind="constant", mean_offset=float(c))


@dataclass(frozen=True)
class InducedObservable:
    """Excursion sums f_Y(h): the observable accumulated over one column climb."""

    values: np.ndarray  # index by height; values[0] unused
    source_kind: str

    def value(self, h):
        return self.values[np.asarray(h)]

    def mean_residual(self, model: TowerModel) -> float:
        """Integral of f_Y against the return law mu_Y (zero for centered f)."""
        return float(np.dot(model.p[model.heights], self.values[model.heights]))


def induce(model: TowerModel, f: Observable) -> InducedObservable:
    vals = np.asarray(f.induced_values(), dtype=float).copy()
    vals.setflags(write=False)
    return InducedObservable(values=vals, source_kind=f.kind)


@dataclass(frozen=True)
class SeparatelyLipschitzFunctional:
    """A function of an m-step orbit block with per-coordinate Lipschitz bounds.

    ``evaluate`` takes height and level arrays of shape (..., m) and returns
    the functional per row.  ``lip_profile[i]`` bounds the change of the value
    when only coordinate i moves, against the diameter-1 alphabet metric;
    the bound is enforced in tests by fuzzing, not assumed.
    """

    window: int
    lip_profile: np.ndarray
    kind: str
    _evaluate: object

    def __call__(self, H, I):
        H = np.asarray(H)
        I = np.asarray(I)
        if H.shape[-1] != self.window or I.shape != H.shape:
            raise ValueError("orbit block shape must end with the window length")
        return self._evaluate(H, I)

    def value_points(self, points) -> float:
        H = np.array([p.height for p in points])
        I = np.array([p.level for p in points])
        return float(self(H[None, :], I[None, :])[0])


def make_functional(
    model: TowerModel,
    kind: str,
    f: Observable,
    n: int | None = None,
    weights=None,
    window: int | None = None,
    smoothing: float = 1.0,
    avg_width: int | None = None,
) -> SeparatelyLipschitzFunctional:
    """Build one of the stock functional families with its Lip profile.

    kinds:
      - "birkhoff": K = S_n f; Lip_i = osc(f) for i < n.
      - "weighted_sum": K = sum_i w_i f(x_i); Lip_i = |w_i| osc(f).
      - "soft_max": smoothed maximum of sliding window averages of f,
        K = s * logsumexp(A_j / s) over windows of width W; the smoothing is
        1-Lipschitz in sup norm over the averages and each coordinate enters
        each average with weight 1/W, so Lip_i = osc(f)/W.
    """
    osc = f.osc
    if kind == "birkhoff":
        if n is None or n < 1:
            raise ValueError("birkhoff functional needs n >= 1")
        lip = np.full(n, osc)

        def ev(H, I, _f=f):
            return _f.value(H, I).sum(axis=-1)

        return SeparatelyLipschitzFunctional(n, lip, kind, ev)
    if kind == "weighted_sum":
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weighted_sum needs a nonempty weight vector")
        lip = np.abs(w) * osc

        def ev(H, I, _f=f, _w=w):
            return _f.value(H, I) @ _w

        return SeparatelyLipschitzFunctional(w.size, lip, kind, ev)
    if kind == "soft_max":
        m = int(window or 0)
        if m < 1:
            raise ValueError("soft_max needs a positive window")
        W = int(avg_width) if avg_width else max(1, m // 8)
        if not 1 <= W <= m:
            raise ValueError("avg_width must lie in [1, window]")
        if smoothing <= 0:
            raise ValueError("smoothing scale must be positive")
        lip = np.full(m, osc / W)

        def ev(H, I, _f=f, _W=W, _s=float(smoothing)):
            F = _f.value(H, I)
            c = np.cumsum(F, axis=-1)
            pad = np.zeros(c.shape[:-1] + (1,))
            c = np.concatenate([pad, c], axis=-1)
            A = (c[..., _W:] - c[..., :-_W]) / _W
            return _s * logsumexp(A / _s, axis=-1)

        return SeparatelyLipschitzFunctional(m, lip, kind, ev)
    raise ValueError(f"unknown functional kind {kind!r}")


def fuzz_lip_profile(model: TowerModel, K: SeparatelyLipschitzFunctional, trials: int, rng) -> float:
    """Worst observed |K(x) - K(x')| - Lip_i over single-coordinate swaps.

    Draws random orbit blocks from the model's cell alphabet, perturbs one
    coordinate per trial, and returns the maximal margin by which the declared
    profile was exceeded (<= 0 means the profile held; tests allow 1e-9).
    """
    hs = model.heights
    cells_h = np.repeat(hs, hs)
    cells_i = np.concatenate([np.arange(h) for h in hs])
    m = K.window
    pick = rng.integers(0, cells_h.size, size=(trials, m))
    H, I = cells_h[pick], cells_i[pick]
    v0 = K(H, I)
    j = rng.integers(0, m, size=trials)
    alt = rng.integers(0, cells_h.size, size=trials)
    H2, I2 = H.copy(), I.copy()
    rr = np.arange(trials)
    H2[rr, j] = cells_h[alt]
    I2[rr, j] = cells_i[alt]
    v1 = K(H2, I2)
    return float(np.max(np.abs(v1 - v0) - K.lip_profile[j]))


def birkhoff_sum_by_excursions(f: Observable, start_height: int, start_level: int, heights, n: int) -> float:
    """S_n f along a scripted orbit, assembled from exact excursion sums.

    The orbit starts at (start_height, start_level), climbs to the top, then
    consumes ``heights`` one full column at a time; only the first and last
    partial columns need partial sums.  Exactly matches the per-step reference
    sum, which is the identity tests pin down.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return 0.0
    first = min(start_height - start_level, n)
    total = float(f.partial_sum(start_height, start_level, start_level + first))
    left = n - first
    fY = f.induced_values()
    for h in heights:
        if left <= 0:
            break
        h = int(h)
        if left >= h:
            total += float(fY[h])
            left -= h
        else:
            total += float(f.partial_sum(h, 0, left))
            left = 0
    if left > 0:
        raise ValueError("script exhausted before n steps")
    return total
