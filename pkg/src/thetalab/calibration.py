"""Flat-model calibration forms and their product decompositions.

Each model packages an (n-4)-form theta on R^n, optionally split over a
product R^dimY x R^dimX (Y axes first) as theta = vol_Y ^ beta + alpha,
where beta lives on the X factor.

Coordinate conventions are frozen here in one constant table; correctness
is enforced downstream by convention-independent spectral and
metric-recovery checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from .forms import (ExteriorForm, OrientedMetric, basis_form, form,
                    hodge_star, unit_metric, wedge, wedge_all, zero_form)

# Associative 3-form on R^7, fixed convention:
# e123 + e145 + e167 + e246 - e257 - e347 - e356
_G2_TERMS: Dict[Tuple[int, int, int], float] = {
    (1, 2, 3): 1.0,
    (1, 4, 5): 1.0,
    (1, 6, 7): 1.0,
    (2, 4, 6): 1.0,
    (2, 5, 7): -1.0,
    (3, 4, 7): -1.0,
    (3, 5, 6): -1.0,
}

# Self-dual 2-form triple on R^4 (unit metric, standard orientation):
# sigma_i ^ sigma_j = 2 delta_ij vol
_SD_TRIPLE = (
    {(1, 2): 1.0, (3, 4): 1.0},
    {(1, 3): 1.0, (2, 4): -1.0},
    {(1, 4): 1.0, (2, 3): 1.0},
)


class UnknownModelError(KeyError):
    """Raised for unrecognized model or product-row labels."""


class DegenerateThetaError(ValueError):
    """Raised when theta induces the zero operator on 2-forms."""


@dataclass(frozen=True)
class CalibratedModel:
    n: int
    theta: ExteriorForm
    label: str
    split: Optional[Tuple[int, int]] = None  # (dimY, dimX), Y axes first
    beta: Optional[ExteriorForm] = None      # form on the X factor (local axes)
    alpha: Optional[ExteriorForm] = None     # mixed remainder on the full space

    def __post_init__(self):
        if self.theta.n != self.n:
            raise ValueError("theta ambient dimension mismatch")
        if self.theta.degree != self.n - 4:
            raise ValueError(
                f"theta must have degree n-4={self.n - 4}, got {self.theta.degree}")
        if not self.theta.coeffs:
            raise ValueError("theta must be nonzero")
        if self.split is not None:
            dy, dx = self.split
            if dy + dx != self.n:
                raise ValueError("split dimensions must sum to n")
            if self.beta is None or self.alpha is None:
                raise ValueError("split models require beta and alpha")
            resid = self.theta - wedge(y_volume(dy, self.n),
                                       embed_x(self.beta, dy, self.n)) - self.alpha
            if resid.norm_max() > 1e-12:
                raise ValueError(
                    f"split identity violated: max residual {resid.norm_max():.3e}")

    @property
    def metric(self) -> OrientedMetric:
        return unit_metric(self.n)

    def x_model(self) -> "CalibratedModel":
        """The X-factor model carrying beta, for eta_beta computations."""
        if self.split is None:
            raise ValueError("model has no product split")
        dy, dx = self.split
        return CalibratedModel(dx, self.beta, label=self.label + "/X")


def y_volume(dim_y: int, n: int) -> ExteriorForm:
    """vol_Y = dx_1 ^ ... ^ dx_dimY embedded in R^n."""
    if dim_y == 0:
        return ExteriorForm(n, 0, {(): 1.0})
    return basis_form(n, tuple(range(1, dim_y + 1)))


def embed_x(a: ExteriorForm, dim_y: int, n: int) -> ExteriorForm:
    """Shift a form on the X factor (local axes 1..dimX) into R^n."""
    return ExteriorForm(n, a.degree,
                        {tuple(i + dim_y for i in idx): c
                         for idx, c in a.coeffs.items()})


def _sd_triple(n: int, offset: int) -> Tuple[ExteriorForm, ...]:
    return tuple(
        ExteriorForm(n, 2, {(i + offset, j + offset): c
                            for (i, j), c in t.items()})
        for t in _SD_TRIPLE)


def g2_form() -> CalibratedModel:
    theta = ExteriorForm(7, 3, dict(_G2_TERMS))
    return CalibratedModel(7, theta, label="g2")


def g2_dual() -> ExteriorForm:
    return hodge_star(g2_form().theta, unit_metric(7))


def spin7_form() -> CalibratedModel:
    """Cayley 4-form: dx1 ^ phi + psi with phi, psi on axes 2..8."""
    phi = ExteriorForm(8, 3, {tuple(i + 1 for i in idx): c
                              for idx, c in _G2_TERMS.items()})
    psi7 = g2_dual()
    psi = ExteriorForm(8, 4, {tuple(i + 1 for i in idx): c
                              for idx, c in psi7.coeffs.items()})
    theta = wedge(basis_form(8, (1,)), phi) + psi
    return CalibratedModel(8, theta, label="spin7")


def four_manifold_model() -> CalibratedModel:
    return CalibratedModel(4, ExteriorForm(4, 0, {(): 1.0}), label="four_manifold")


def kahler_omega(m: int, n: int | None = None, offset: int = 0) -> ExteriorForm:
    """Standard Kahler form sum dx_{2j-1} ^ dx_{2j}, optionally embedded."""
    if n is None:
        n = 2 * m
    return ExteriorForm(n, 2, {(offset + 2 * j - 1, offset + 2 * j): 1.0
                               for j in range(1, m + 1)})


def _omega_power(om: ExteriorForm, k: int) -> ExteriorForm:
    if k == 0:
        return ExteriorForm(om.n, 0, {(): 1.0})
    return wedge_all([om] * k)


def kahler_power(m: int) -> CalibratedModel:
    """theta = omega^{m-2}/(m-2)! on R^{2m}."""
    if m < 2:
        raise ValueError("complex dimension must be >= 2")
    if m == 2:
        return CalibratedModel(4, ExteriorForm(4, 0, {(): 1.0}), label="kahler2")
    om = kahler_omega(m)
    theta = (1.0 / math.factorial(m - 2)) * _omega_power(om, m - 2)
    return CalibratedModel(2 * m, theta, label=f"kahler{m}")


def product_theta(row: str, m1: int | None = None, m2: int | None = None
                  ) -> CalibratedModel:
    """Product calibration models: theta = vol_Y ^ beta + alpha.

    Rows: G2_T3xHK, G2_S1xCY3, Spin7_HKxHK, Spin7_S1xG2,
    Kahler_product (requires m1 >= 1, m2 >= 2), Circle_T4.
    """
    row_key = row.strip().lower()
    if row_key in ("g2_t3xhk", "t3xhk"):
        n, dy = 7, 3
        omegas = _sd_triple(n, dy)
        omegas = (omegas[0], omegas[1], -1.0 * omegas[2])
        alpha = zero_form(n, 3)
        for i, om in enumerate(omegas, start=1):
            alpha = alpha + wedge(basis_form(n, (i,)), om)
        beta = ExteriorForm(4, 0, {(): 1.0})
        theta = wedge(y_volume(dy, n), embed_x(beta, dy, n)) + alpha
        return CalibratedModel(n, theta, label="g2_t3xhk",
                               split=(dy, 4), beta=beta, alpha=alpha)
    if row_key in ("g2_s1xcy3", "s1xcy3"):
        n, dy = 7, 1
        beta = kahler_omega(3)                       # omega on the CY3 factor
        re_omega = form(6, {(1, 3, 5): 1.0, (1, 4, 6): -1.0,
                            (2, 3, 6): -1.0, (2, 4, 5): -1.0})
        alpha = embed_x(re_omega, dy, n)
        theta = wedge(y_volume(dy, n), embed_x(beta, dy, n)) + alpha
        return CalibratedModel(n, theta, label="g2_s1xcy3",
                               split=(dy, 6), beta=beta, alpha=alpha)
    if row_key in ("spin7_hkxhk", "hkxhk"):
        n, dy = 8, 4
        taus = _sd_triple(n, 0)
        omegas = _sd_triple(n, dy)
        vol_x = basis_form(n, (5, 6, 7, 8))
        alpha = vol_x
        for t, om in zip(taus, omegas):
            alpha = alpha - wedge(t, om)
        beta = ExteriorForm(4, 0, {(): 1.0})
        theta = wedge(y_volume(dy, n), embed_x(beta, dy, n)) + alpha
        return CalibratedModel(n, theta, label="spin7_hkxhk",
                               split=(dy, 4), beta=beta, alpha=alpha)
    if row_key in ("spin7_s1xg2", "s1xg2"):
        n, dy = 8, 1
        phi = g2_form().theta
        psi = g2_dual()
        beta = phi
        alpha = embed_x(psi, dy, n)
        theta = wedge(y_volume(dy, n), embed_x(beta, dy, n)) + alpha
        return CalibratedModel(n, theta, label="spin7_s1xg2",
                               split=(dy, 7), beta=beta, alpha=alpha)
    if row_key in ("kahler_product", "kahler_prod"):
        if m1 is None or m2 is None:
            raise ValueError("Kahler_product requires m1 and m2")
        if m1 < 1 or m2 < 2:
            raise ValueError("need m1 >= 1 and m2 >= 2")
        m = m1 + m2
        n, dy = 2 * m, 2 * m1
        om1 = kahler_omega(m1, n=n)
        om2 = kahler_omega(m2, n=n, offset=dy)
        beta = (1.0 / math.factorial(m2 - 2)) * _omega_power(kahler_omega(m2), m2 - 2)
        alpha = zero_form(n, 2 * (m - 2))
        for k in range(0, m - 1):
            if k == m1 or k > m1 or (m - 2 - k) > m2:
                continue
            c = 1.0 / (math.factorial(k) * math.factorial(m - 2 - k))
            alpha = alpha + c * wedge(_omega_power(om1, k),
                                      _omega_power(om2, m - 2 - k))
        theta = (1.0 / math.factorial(m - 2)) * _omega_power(om1 + om2, m - 2)
        return CalibratedModel(n, theta, label=f"kahler_product_{m1}_{m2}",
                               split=(dy, 2 * m2), beta=beta, alpha=alpha)
    if row_key in ("circle_t4", "s1xt4"):
        n, dy = 5, 1
        beta = ExteriorForm(4, 0, {(): 1.0})
        alpha = zero_form(n, 1)
        theta = basis_form(n, (1,))
        return CalibratedModel(n, theta, label="circle_t4",
                               split=(dy, 4), beta=beta, alpha=alpha)
    raise UnknownModelError(row)


def catalog(label: str) -> CalibratedModel:
    """Resolve a model by string label (CLI entry point)."""
    key = label.strip().lower()
    if key in ("g2", "phi0"):
        return g2_form()
    if key in ("spin7", "cayley"):
        return spin7_form()
    if key in ("four_manifold", "asd4", "4d"):
        return four_manifold_model()
    if key == "spin7_hk":
        key = "spin7_hkxhk"
    if key.startswith("kahler_product"):
        parts = key.split("_")
        return product_theta("kahler_product", m1=int(parts[-2]), m2=int(parts[-1]))
    if key.startswith("kahler"):
        return kahler_power(int(key[len("kahler"):]))
    return product_theta(key)


CATALOG_LABELS = ("g2", "spin7", "four_manifold", "kahler3", "kahler4",
                  "g2_t3xhk", "g2_s1xcy3", "spin7_hkxhk", "spin7_s1xg2",
                  "kahler_product_1_2", "kahler_product_1_3",
                  "kahler_product_2_2", "circle_t4")


def normalize_admissible(model: CalibratedModel) -> CalibratedModel:
    """Rescale theta so that the lowest eigenvalue of its 2-form operator is -1."""
    from .spectral import q_matrix  # local import: spectral depends on this module
    import numpy as np
    mat = q_matrix(model)
    eig = np.linalg.eigvalsh(mat)
    lam_min, lam_max = eig[0], eig[-1]
    if max(abs(lam_min), abs(lam_max)) < 1e-14:
        raise DegenerateThetaError("operator of theta is identically zero")
    scale = -1.0 / lam_min if lam_min < 0 else -1.0 / lam_max
    if abs(scale - 1.0) < 1e-14:
        return model
    theta = scale * model.theta
    beta = scale * model.beta if model.beta is not None else None
    alpha = scale * model.alpha if model.alpha is not None else None
    return CalibratedModel(model.n, theta, label=model.label,
                           split=model.split, beta=beta, alpha=alpha)


def hym_slope(deg: float, vol: float, r: int, m: int) -> float:
    """Hermitian Yang-Mills slope mu = 2 pi deg / ((m-1)! vol r)."""
    if vol <= 0 or r < 1 or m < 1:
        raise ValueError("need vol > 0, r >= 1, m >= 1")
    return 2.0 * math.pi * deg / (math.factorial(m - 1) * vol * r)
