"""Boundary-case offspring laws, their spine-tilted versions and the spine step law.

The shipped family is ``GaussianDyadic(p)``: with probability p a particle has two
children displaced by i.i.d. N(mu, s2), otherwise none.  The boundary conditions

    E[sum e^{-V}] = 2p exp(-mu + s2/2) = 1,    E[sum V e^{-V}] = 0

force mu = s2 = 2 ln(2p), so p must lie in (1/2, 1].
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import integrate, stats

__all__ = [
    "Family",
    "PointProcessSpec",
    "BoundaryReport",
    "OffspringDraw",
    "TiltedDraw",
    "StepDistribution",
    "make_spec",
    "validate_boundary",
    "sample_offspring",
    "sample_tilted_offspring",
    "spine_step_law",
    "spec_from_config",
    "spec_to_config",
    "srw",
    "skewed_lattice",
    "STEP_LAWS",
]


class Family(str, enum.Enum):
    GAUSSIAN_DYADIC = "gaussian-dyadic"


@dataclass(frozen=True)
class PointProcessSpec:
    """Parameters of a boundary-case point process.

    ``mu`` and ``sigma_g2`` are derived from ``p`` by :func:`make_spec`; building
    the dataclass by hand is allowed (validation tests do it on purpose) but
    nothing then guarantees the boundary conditions.
    """

    family: Family
    p: float
    mu: float
    sigma_g2: float

    @property
    def sigma_g(self) -> float:
        return math.sqrt(self.sigma_g2)

    @property
    def mean_offspring(self) -> float:
        return 2.0 * self.p

    def derived(self) -> dict:
        return {"mu": self.mu, "sigma_g2": self.sigma_g2, "mean_offspring": self.mean_offspring}


def make_spec(family: Family | str = Family.GAUSSIAN_DYADIC, p: float = 1.0) -> PointProcessSpec:
    family = Family(family)
    p = float(p)
    if not (0.5 < p <= 1.0):
        raise ValueError(f"p must lie in (1/2, 1] for a boundary-case GaussianDyadic law, got {p}")
    s2 = 2.0 * math.log(2.0 * p)
    return PointProcessSpec(family, p, s2, s2)


@dataclass(frozen=True)
class BoundaryReport:
    residual_mass: float
    residual_tilt: float
    sigma2_spine: float

    def ok(self, tol: float = 1e-10) -> bool:
        return self.residual_mass < tol and self.residual_tilt < tol


def validate_boundary(spec: PointProcessSpec) -> BoundaryReport:
    """Check both boundary conditions by adaptive quadrature.

    The integrals are taken against the Gaussian displacement density directly,
    so they do not reuse the closed forms they are checking.
    """
    mu, sd = spec.mu, math.sqrt(spec.sigma_g2)
    dens = stats.norm(mu, sd).pdf
    lo, hi = mu - 40 * sd, mu + 40 * sd
    opts = dict(epsabs=1e-13, epsrel=1e-13, limit=200, points=[0.0, mu])

    def moment(k: int) -> float:
        val, _ = integrate.quad(lambda v: v ** k * math.exp(-v) * dens(v), lo, hi, **opts)
        return 2.0 * spec.p * val

    m0, m1, m2 = moment(0), moment(1), moment(2)
    return BoundaryReport(abs(m0 - 1.0), abs(m1), m2)


@dataclass(frozen=True)
class OffspringDraw:
    displacements: np.ndarray


@dataclass(frozen=True)
class TiltedDraw:
    spine_displacement: float
    sibling_displacements: np.ndarray


def sample_offspring(spec: PointProcessSpec, rng: np.random.Generator, size: int | None = None):
    """Draw offspring point processes.

    With ``size=None`` returns one :class:`OffspringDraw`; otherwise returns a
    boolean branching mask of shape (size,) and displacements of shape (size, 2)
    (rows with mask False are to be ignored).
    """
    sd = spec.sigma_g
    if size is None:
        if rng.random() < spec.p:
            return OffspringDraw(rng.normal(spec.mu, sd, 2))
        return OffspringDraw(np.empty(0))
    branch = rng.random(size) < spec.p
    disp = rng.normal(spec.mu, sd, (size, 2))
    return branch, disp


def sample_tilted_offspring(spec: PointProcessSpec, rng: np.random.Generator, size: int | None = None):
    """Draw the spine-tilted offspring law.

    Under the tilt, the spine parent always branches; the chosen child's
    displacement follows the spine step law and the single sibling keeps the
    untilted N(mu, s2) law (children are i.i.d., so the tilt factorizes).
    """
    sd = spec.sigma_g
    if size is None:
        spine = rng.normal(0.0, sd)
        sib = rng.normal(spec.mu, sd, 1)
        return TiltedDraw(float(spine), sib)
    spine = rng.normal(0.0, sd, size)
    sib = rng.normal(spec.mu, sd, size)
    return spine, sib


@dataclass(frozen=True)
class StepDistribution:
    """A centered random-walk step law: continuous Gaussian or finite integer lattice."""

    kind: str
    mean: float = 0.0
    variance: float = 1.0
    support: tuple[int, ...] = ()
    probs: tuple[float, ...] = ()
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind == "gaussian":
            if not self.variance > 0:
                raise ValueError("variance must be positive")
            if abs(self.mean) > 1e-12:
                raise ValueError("step law must be centered")
        elif self.kind == "lattice":
            if len(self.support) != len(self.probs) or not self.support:
                raise ValueError("support and probs must be non-empty and the same length")
            pr = np.asarray(self.probs, dtype=float)
            if np.any(pr < 0) or abs(pr.sum() - 1.0) > 1e-12:
                raise ValueError("lattice probabilities must be non-negative and sum to 1")
            sup = np.asarray(self.support)
            m = float(np.dot(sup, pr))
            if abs(m) > 1e-12:
                raise ValueError(f"lattice step law must be centered, mean is {m}")
            object.__setattr__(self, "mean", 0.0)
            object.__setattr__(self, "variance", float(np.dot(sup * sup, pr)))
            if not self.variance > 0:
                raise ValueError("lattice step law is degenerate")
        else:
            raise ValueError(f"unknown step kind {self.kind!r}")

    @classmethod
    def gaussian(cls, variance: float, name: str = "") -> "StepDistribution":
        return cls("gaussian", 0.0, float(variance), name=name or f"gaussian({variance:g})")

    @classmethod
    def lattice(cls, support, probs, name: str = "") -> "StepDistribution":
        return cls("lattice", support=tuple(int(s) for s in support),
                   probs=tuple(float(q) for q in probs), name=name or "lattice")

    @property
    def is_lattice(self) -> bool:
        return self.kind == "lattice"

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.normal(0.0, self.sigma, size)
        return rng.choice(np.asarray(self.support), size=size, p=np.asarray(self.probs))

    def cdf(self, x):
        if self.kind == "gaussian":
            return stats.norm(0.0, self.sigma).cdf(x)
        sup = np.asarray(self.support, dtype=float)
        cp = np.cumsum(self.probs)
        idx = np.searchsorted(sup, np.asarray(x, dtype=float), side="right")
        return np.where(idx > 0, cp[np.maximum(idx - 1, 0)], 0.0)

    def frozen(self):
        """A scipy distribution usable in KS tests (Gaussian only)."""
        if self.kind != "gaussian":
            raise ValueError("only the Gaussian step law has a continuous scipy counterpart")
        return stats.norm(0.0, self.sigma)


def srw() -> StepDistribution:
    """Simple symmetric random walk."""
    return StepDistribution.lattice((-1, 1), (0.5, 0.5), name="srw")


def skewed_lattice() -> StepDistribution:
    """A centered but asymmetric walk on {-2, ..., 2}."""
    return StepDistribution.lattice((-2, -1, 0, 1, 2), (0.2, 0.1, 0.3, 0.3, 0.1), name="skewed")


STEP_LAWS = {"srw": srw, "skewed": skewed_lattice}


def spine_step_law(spec: PointProcessSpec) -> StepDistribution:
    """The e^{-x}-tilted, size-biased one-step law of the spine.

    Tilting N(mu, s2) by e^{-x} shifts its mean by -s2; with mu = s2 the result
    is N(0, s2).
    """
    if spec.family is not Family.GAUSSIAN_DYADIC:
        raise NotImplementedError(spec.family)
    shift = spec.mu - spec.sigma_g2
    if abs(shift) > 1e-12:
        raise ValueError(f"spec is not centered under the tilt (mu - s2 = {shift:g})")
    return StepDistribution.gaussian(spec.sigma_g2, name="spine")


def spec_from_config(section: Mapping) -> PointProcessSpec:
    allowed = {"family", "p"}
    unknown = set(section) - allowed
    if unknown:
        raise ValueError(f"unknown key(s) in [model]: {', '.join(sorted(unknown))}")
    return make_spec(section.get("family", Family.GAUSSIAN_DYADIC.value), section.get("p", 1.0))


def spec_to_config(spec: PointProcessSpec) -> dict:
    return {"family": spec.family.value, "p": spec.p}
