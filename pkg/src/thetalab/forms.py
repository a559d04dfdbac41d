"""Numerical exterior algebra on Euclidean R^n with diagonal metrics.

Forms are stored as sparse coefficient maps over strictly increasing
multi-indices (1-based axis labels).  All signs come from explicit
transposition counts, so results are deterministic bit for bit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Sequence, Tuple

MultiIndex = Tuple[int, ...]


class DimensionMismatchError(ValueError):
    """Raised when operands live on different ambient spaces."""


def _check_index(idx: Sequence[int], n: int, degree: int | None = None) -> MultiIndex:
    t = tuple(int(i) for i in idx)
    if degree is not None and len(t) != degree:
        raise ValueError(f"multi-index {t} has length {len(t)}, expected {degree}")
    if any(not (1 <= i <= n) for i in t):
        raise ValueError(f"multi-index {t} out of range for n={n}")
    if any(t[i] >= t[i + 1] for i in range(len(t) - 1)):
        raise ValueError(f"multi-index {t} not strictly increasing")
    return t


def sort_with_sign(labels: Sequence[int]) -> Tuple[MultiIndex, int]:
    """Sort axis labels, returning (sorted tuple, permutation sign).

    Sign is 0 if any label repeats.
    """
    labels = list(labels)
    sign = 1
    # insertion sort; the label lists here have length <= 16
    for i in range(1, len(labels)):
        j = i
        while j > 0 and labels[j - 1] > labels[j]:
            labels[j - 1], labels[j] = labels[j], labels[j - 1]
            sign = -sign
            j -= 1
    for i in range(len(labels) - 1):
        if labels[i] == labels[i + 1]:
            return tuple(labels), 0
    return tuple(labels), sign


def merge_sign(a: MultiIndex, b: MultiIndex) -> int:
    """Sign of the permutation sorting the concatenation a+b; 0 on overlap."""
    _, s = sort_with_sign(list(a) + list(b))
    return s


@dataclass(frozen=True)
class OrientedMetric:
    """Diagonal metric: g(e_i, e_i) = scale[i]^2, with an orientation sign."""

    n: int
    scale: Tuple[float, ...] = ()
    orientation: int = 1

    def __post_init__(self):
        if not self.scale:
            object.__setattr__(self, "scale", (1.0,) * self.n)
        if len(self.scale) != self.n:
            raise ValueError("scale length must equal n")
        if any(s <= 0 for s in self.scale):
            raise ValueError("metric scales must be positive")
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")

    def volume_factor(self) -> float:
        return math.prod(self.scale)


def unit_metric(n: int) -> OrientedMetric:
    return OrientedMetric(n)


@dataclass(frozen=True)
class ExteriorForm:
    """Degree-k alternating form on R^n as {multi-index: coefficient}."""

    n: int
    degree: int
    coeffs: Dict[MultiIndex, float] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for idx, c in self.coeffs.items():
            t = _check_index(idx, self.n, self.degree)
            c = float(c)
            if not math.isfinite(c):
                raise ValueError(f"non-finite coefficient at {t}")
            if c != 0.0:
                clean[t] = c
        object.__setattr__(self, "coeffs", clean)

    def __getitem__(self, idx: Sequence[int]) -> float:
        return self.coeffs.get(tuple(idx), 0.0)

    def __add__(self, other: "ExteriorForm") -> "ExteriorForm":
        self._compat(other)
        out = dict(self.coeffs)
        for idx, c in other.coeffs.items():
            out[idx] = out.get(idx, 0.0) + c
        return ExteriorForm(self.n, self.degree, out)

    def __sub__(self, other: "ExteriorForm") -> "ExteriorForm":
        return self + (-1.0) * other

    def __rmul__(self, c: float) -> "ExteriorForm":
        return ExteriorForm(self.n, self.degree,
                            {idx: c * v for idx, v in self.coeffs.items()})

    def __neg__(self) -> "ExteriorForm":
        return -1.0 * self

    def _compat(self, other: "ExteriorForm"):
        if self.n != other.n:
            raise DimensionMismatchError(f"n mismatch: {self.n} vs {other.n}")
        if self.degree != other.degree:
            raise DimensionMismatchError(
                f"degree mismatch: {self.degree} vs {other.degree}")

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(abs(c) <= tol for c in self.coeffs.values())

    def norm_max(self) -> float:
        return max((abs(c) for c in self.coeffs.values()), default=0.0)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "degree": self.degree,
            "terms": [{"idx": list(idx), "c": c}
                      for idx, c in sorted(self.coeffs.items())],
        }

    @staticmethod
    def from_json(obj: dict) -> "ExteriorForm":
        return ExteriorForm(obj["n"], obj["degree"],
                            {tuple(t["idx"]): t["c"] for t in obj["terms"]})


def zero_form(n: int, degree: int) -> ExteriorForm:
    return ExteriorForm(n, degree, {})


def basis_form(n: int, idx: Sequence[int], c: float = 1.0) -> ExteriorForm:
    t = tuple(idx)
    return ExteriorForm(n, len(t), {t: c})


def form(n: int, terms: Dict[Sequence[int], float]) -> ExteriorForm:
    """Build a form from possibly unsorted index tuples, fixing signs."""
    degree = None
    out: Dict[MultiIndex, float] = {}
    for idx, c in terms.items():
        t, s = sort_with_sign(list(idx))
        if degree is None:
            degree = len(t)
        if s == 0:
            continue
        out[t] = out.get(t, 0.0) + s * c
    if degree is None:
        raise ValueError("empty term map; use zero_form")
    return ExteriorForm(n, degree, out)


def basis_indices(n: int, k: int) -> Tuple[MultiIndex, ...]:
    """All degree-k multi-indices on n axes, lexicographic."""
    return tuple(itertools.combinations(range(1, n + 1), k))


def wedge(a: ExteriorForm, b: ExteriorForm) -> ExteriorForm:
    if a.n != b.n:
        raise DimensionMismatchError(f"n mismatch: {a.n} vs {b.n}")
    degree = a.degree + b.degree
    if degree > a.n:
        return zero_form(a.n, min(degree, a.n))
    out: Dict[MultiIndex, float] = {}
    for ia, ca in a.coeffs.items():
        for ib, cb in b.coeffs.items():
            merged, s = sort_with_sign(list(ia) + list(ib))
            if s == 0:
                continue
            out[merged] = out.get(merged, 0.0) + s * ca * cb
    return ExteriorForm(a.n, degree, out)


def wedge_all(factors: Iterable[ExteriorForm]) -> ExteriorForm:
    factors = list(factors)
    acc = factors[0]
    for f in factors[1:]:
        acc = wedge(acc, f)
    return acc


def hodge_star(a: ExteriorForm, g: OrientedMetric) -> ExteriorForm:
    """Hodge star for a diagonal metric.

    star(dx_I) = orientation * sign(I, I^c) * (prod_{i in I^c} s_i / prod_{i in I} s_i) dx_{I^c}
    """
    if a.n != g.n:
        raise DimensionMismatchError(f"n mismatch: {a.n} vs {g.n}")
    n = a.n
    all_axes = set(range(1, n + 1))
    out: Dict[MultiIndex, float] = {}
    for idx, c in a.coeffs.items():
        comp = tuple(sorted(all_axes - set(idx)))
        s = merge_sign(idx, comp)
        num = math.prod(g.scale[i - 1] for i in comp)
        den = math.prod(g.scale[i - 1] for i in idx)
        out[comp] = out.get(comp, 0.0) + g.orientation * s * (num / den) * c
    if a.degree == 0:
        # star(1) = vol; handled by the loop with the empty index
        if not a.coeffs:
            return zero_form(n, n)
    return ExteriorForm(n, n - a.degree, out)


def interior(v: Sequence[float], a: ExteriorForm) -> ExteriorForm:
    """Contraction with a coefficient vector in the coordinate frame."""
    if a.degree == 0:
        raise ValueError("interior product of a 0-form is undefined")
    if len(v) != a.n:
        raise DimensionMismatchError(f"vector length {len(v)} != n={a.n}")
    out: Dict[MultiIndex, float] = {}
    for idx, c in a.coeffs.items():
        for pos, axis in enumerate(idx):
            vi = v[axis - 1]
            if vi == 0.0:
                continue
            rest = idx[:pos] + idx[pos + 1:]
            out[rest] = out.get(rest, 0.0) + ((-1) ** pos) * vi * c
    return ExteriorForm(a.n, a.degree - 1, out)


def axis_vector(n: int, axis: int) -> Tuple[float, ...]:
    return tuple(1.0 if i == axis else 0.0 for i in range(1, n + 1))


def inner(a: ExteriorForm, b: ExteriorForm, g: OrientedMetric | None = None) -> float:
    """Pointwise fibre inner product; orthonormal dx_I for the unit metric."""
    a._compat(b)
    if g is None:
        g = unit_metric(a.n)
    if a.n != g.n:
        raise DimensionMismatchError(f"n mismatch: {a.n} vs {g.n}")
    total = 0.0
    for idx, ca in sorted(a.coeffs.items()):
        cb = b.coeffs.get(idx)
        if cb is None:
            continue
        w = math.prod(g.scale[i - 1] ** 2 for i in idx)
        total += ca * cb / w
    return total


def volume_form(g: OrientedMetric) -> ExteriorForm:
    idx = tuple(range(1, g.n + 1))
    return ExteriorForm(g.n, g.n, {idx: g.orientation * g.volume_factor()})
