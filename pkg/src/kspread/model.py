"""Model parameterization: offspring laws, type weights, mean matrix.

The population has J vertex types. A type-i vertex is infected with weight
p_i = beta_i / n and, once infected, makes a random number of infection
attempts drawn from its type's offspring law. Attempts land on type j with
probability alpha_j = gamma_j * beta_j, so the per-type attempt counts of a
type-i vertex with total capacity l are Multinomial(l; alpha).

Everything here is n-free except InstanceSpec, which pins a concrete
population size and integer per-type counts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (
    ConvergenceFailure,
    EmptySupport,
    NonFiniteMoment,
    NormalizationError,
    PopulationTooSmall,
)

NORM_TOL = 1e-12
FAMILIES = ("point_mass", "poisson", "geometric", "binomial", "empirical")


@dataclass(frozen=True)
class OffspringLaw:
    """Distribution of the spread capacity of one vertex type.

    Supported families (all with finite mean and variance):
      point_mass(k), poisson(lam), geometric(p) on {0,1,2,...},
      binomial(m,p), empirical(support, probs).

    `params` is the canonical parameter tuple for the family; `mean` and
    `variance` are cached at construction.
    """

    family: str
    params: tuple
    mean: float
    variance: float

    @classmethod
    def point_mass(cls, k: int) -> "OffspringLaw":
        if k < 0 or k != int(k):
            raise NonFiniteMoment(f"point mass must sit on a natural number, got {k}")
        return cls("point_mass", (int(k),), float(k), 0.0)

    @classmethod
    def poisson(cls, lam: float) -> "OffspringLaw":
        if not (lam >= 0.0 and math.isfinite(lam)):
            raise NonFiniteMoment(f"Poisson rate must be finite and >= 0, got {lam}")
        return cls("poisson", (float(lam),), float(lam), float(lam))

    @classmethod
    def geometric(cls, p: float) -> "OffspringLaw":
        # Support {0,1,2,...}: P[k] = p (1-p)^k.
        if not (0.0 < p <= 1.0):
            raise NonFiniteMoment(f"geometric parameter must be in (0,1], got {p}")
        q = 1.0 - p
        return cls("geometric", (float(p),), q / p, q / p**2)

    @classmethod
    def binomial(cls, m: int, p: float) -> "OffspringLaw":
        if m < 0 or m != int(m):
            raise NonFiniteMoment(f"binomial count must be a natural number, got {m}")
        if not (0.0 <= p <= 1.0):
            raise NonFiniteMoment(f"binomial parameter must be in [0,1], got {p}")
        return cls("binomial", (int(m), float(p)), m * p, m * p * (1.0 - p))

    @classmethod
    def empirical(cls, support: Sequence[int], probs: Sequence[float]) -> "OffspringLaw":
        support = tuple(int(k) for k in support)
        probs = tuple(float(q) for q in probs)
        if len(support) == 0:
            raise EmptySupport("empirical law needs at least one atom")
        if len(support) != len(probs):
            raise EmptySupport("support and probability lists differ in length")
        if any(k < 0 for k in support) or len(set(support)) != len(support):
            raise NonFiniteMoment("empirical support must be distinct naturals")
        if any(q < 0 for q in probs) or abs(sum(probs) - 1.0) > NORM_TOL:
            raise NormalizationError(f"empirical pmf sums to {sum(probs)!r}, not 1")
        mean = sum(k * q for k, q in zip(support, probs))
        var = sum((k - mean) ** 2 * q for k, q in zip(support, probs))
        return cls("empirical", (support, probs), mean, var)

    def pmf(self, k: int) -> float:
        """Probability of exactly k attempts."""
        if k < 0:
            return 0.0
        if self.family == "point_mass":
            return 1.0 if k == self.params[0] else 0.0
        if self.family == "poisson":
            lam = self.params[0]
            if lam == 0.0:
                return 1.0 if k == 0 else 0.0
            return math.exp(-lam + k * math.log(lam) - math.lgamma(k + 1))
        if self.family == "geometric":
            p = self.params[0]
            return p * (1.0 - p) ** k
        if self.family == "binomial":
            m, p = self.params
            if k > m:
                return 0.0
            return math.comb(m, k) * p**k * (1.0 - p) ** (m - k)
        support, probs = self.params
        try:
            return probs[support.index(k)]
        except ValueError:
            return 0.0

    def pgf(self, x: float) -> float:
        """Probability generating function E[x^L] for x in [0, 1]."""
        if self.family == "point_mass":
            return float(x) ** self.params[0]
        if self.family == "poisson":
            return math.exp(self.params[0] * (x - 1.0))
        if self.family == "geometric":
            p = self.params[0]
            return p / (1.0 - (1.0 - p) * x)
        if self.family == "binomial":
            m, p = self.params
            return (1.0 - p + p * x) ** m
        support, probs = self.params
        return sum(q * float(x) ** k for k, q in zip(support, probs))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw `size` i.i.d. capacities as an int64 array."""
        if self.family == "point_mass":
            return np.full(size, self.params[0], dtype=np.int64)
        if self.family == "poisson":
            return rng.poisson(self.params[0], size).astype(np.int64)
        if self.family == "geometric":
            # numpy's geometric lives on {1,2,...}; shift to {0,1,...}
            return rng.geometric(self.params[0], size).astype(np.int64) - 1
        if self.family == "binomial":
            m, p = self.params
            return rng.binomial(m, p, size).astype(np.int64)
        support, probs = self.params
        return rng.choice(np.asarray(support, dtype=np.int64), size=size, p=probs)

    def to_json_dict(self) -> dict:
        if self.family == "point_mass":
            params = {"k": self.params[0]}
        elif self.family == "poisson":
            params = {"lam": self.params[0]}
        elif self.family == "geometric":
            params = {"p": self.params[0]}
        elif self.family == "binomial":
            params = {"m": self.params[0], "p": self.params[1]}
        else:
            params = {"support": list(self.params[0]), "probs": list(self.params[1])}
        return {"family": self.family, "params": params}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "OffspringLaw":
        family = doc.get("family")
        params = doc.get("params", {})
        if family == "point_mass":
            return cls.point_mass(params["k"])
        if family == "poisson":
            return cls.poisson(params["lam"])
        if family == "geometric":
            return cls.geometric(params["p"])
        if family == "binomial":
            return cls.binomial(params["m"], params["p"])
        if family == "empirical":
            return cls.empirical(params["support"], params["probs"])
        raise NonFiniteMoment(f"unknown offspring family {family!r}")


@dataclass(frozen=True)
class ModelSpec:
    """Full n-free parameterization of the spread model.

    gamma[i] is the proportion of type-(i+1) vertices, beta[i] = n * p_{i+1}
    the scaled infection weight, offspring[i] the capacity law. `i0` is the
    zero-based type of the initially infected vertex (JSON uses 1-based).

    Constraints: sum gamma = 1 and sum gamma*beta = 1 (total weight 1),
    all entries positive.
    """

    gamma: tuple
    beta: tuple
    offspring: tuple
    i0: int = 0

    @property
    def J(self) -> int:
        return len(self.gamma)

    @property
    def alpha(self) -> np.ndarray:
        return np.asarray(self.gamma) * np.asarray(self.beta)

    @property
    def offspring_means(self) -> np.ndarray:
        return np.array([law.mean for law in self.offspring])

    @property
    def offspring_variances(self) -> np.ndarray:
        return np.array([law.variance for law in self.offspring])

    def to_json_dict(self) -> dict:
        return {
            "J": self.J,
            "gamma": list(self.gamma),
            "beta": list(self.beta),
            "offspring": [law.to_json_dict() for law in self.offspring],
            "i0": self.i0 + 1,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ModelSpec":
        gamma = tuple(float(g) for g in doc["gamma"])
        beta = tuple(float(b) for b in doc["beta"])
        offspring = tuple(OffspringLaw.from_json_dict(d) for d in doc["offspring"])
        i0 = int(doc.get("i0", 1)) - 1
        spec = cls(gamma=gamma, beta=beta, offspring=offspring, i0=i0)
        if "J" in doc and int(doc["J"]) != spec.J:
            raise NormalizationError(f"declared J={doc['J']} but {spec.J} types given")
        return validate_spec(spec)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_json_dict(json.loads(text))


def validate_spec(raw: ModelSpec) -> ModelSpec:
    """Check the normalization and moment invariants; return the spec unchanged.

    Raises NormalizationError when sum gamma != 1 or sum gamma*beta != 1
    (within 1e-12), and NonFiniteMoment / EmptySupport for bad offspring laws
    (those are usually caught at OffspringLaw construction already).
    """
    J = raw.J
    if J < 1 or len(raw.beta) != J or len(raw.offspring) != J:
        raise NormalizationError("gamma, beta and offspring must have equal length >= 1")
    if not (0 <= raw.i0 < J):
        raise NormalizationError(f"seed type index {raw.i0} out of range for J={J}")
    if any(not (0.0 < g <= 1.0) for g in raw.gamma):
        raise NormalizationError("every gamma_i must lie in (0, 1]")
    if any(not (b > 0.0 and math.isfinite(b)) for b in raw.beta):
        raise NormalizationError("every beta_i must be positive and finite")
    gsum = math.fsum(raw.gamma)
    if abs(gsum - 1.0) > NORM_TOL:
        raise NormalizationError(f"sum of gamma is {gsum!r}, must be 1")
    asum = math.fsum(g * b for g, b in zip(raw.gamma, raw.beta))
    if abs(asum - 1.0) > NORM_TOL:
        raise NormalizationError(f"total weight sum gamma*beta is {asum!r}, must be 1")
    for law in raw.offspring:
        if not isinstance(law, OffspringLaw):
            raise NonFiniteMoment("offspring entries must be OffspringLaw instances")
        if not (math.isfinite(law.mean) and math.isfinite(law.variance)):
            raise NonFiniteMoment(f"{law.family} law has non-finite moments")
    return raw


@dataclass(frozen=True, eq=False)
class InstanceSpec:
    """A ModelSpec pinned to a concrete population of n vertices.

    n_i holds the integer per-type counts (largest-remainder rounding of
    gamma_i * n); p = beta / n are the realized per-vertex weights.
    """

    spec: ModelSpec
    n: int
    n_i: np.ndarray

    @cached_property
    def p(self) -> np.ndarray:
        return np.asarray(self.spec.beta) / self.n

    @cached_property
    def alpha_cumulative(self) -> np.ndarray:
        return np.cumsum(self.spec.alpha)


def realize_instance(spec: ModelSpec, n: int) -> InstanceSpec:
    """Assign integer type counts by largest-remainder rounding of gamma_i * n.

    Ties between equal remainders are broken toward the lower type index.
    Raises PopulationTooSmall if some class would end up empty.
    """
    if n < spec.J:
        raise PopulationTooSmall(f"n={n} cannot host {spec.J} nonempty classes")
    exact = np.asarray(spec.gamma, dtype=float) * n
    base = np.floor(exact).astype(np.int64)
    remainder = exact - base
    missing = n - int(base.sum())
    if missing > 0:
        # stable sort keeps the lower index first among equal remainders
        order = np.argsort(-remainder, kind="stable")
        base[order[:missing]] += 1
    if np.any(base < 1):
        raise PopulationTooSmall(
            f"largest-remainder rounding of gamma*n={exact.tolist()} leaves an empty class"
        )
    return InstanceSpec(spec=spec, n=int(n), n_i=base)


def multinomial_split(l: int, alpha: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    """Split l attempts over the J types: Multinomial(l; alpha).

    l = 0 returns the zero vector.
    """
    alpha = np.asarray(alpha, dtype=float)
    if l < 0:
        raise ValueError(f"attempt count must be >= 0, got {l}")
    if abs(float(alpha.sum()) - 1.0) > 1e-9:
        raise NormalizationError(f"split weights sum to {float(alpha.sum())!r}, not 1")
    if l == 0:
        return np.zeros(len(alpha), dtype=np.int64)
    return rng.multinomial(int(l), alpha).astype(np.int64)


@dataclass(frozen=True, eq=False)
class MeanMatrix:
    """Mean offspring matrix m_ij = E[L^i] * alpha_j (rank one by construction)."""

    values: np.ndarray

    @property
    def J(self) -> int:
        return self.values.shape[0]


def mean_matrix(spec: ModelSpec) -> MeanMatrix:
    """Mean offspring matrix of the induced multitype branching process."""
    means = spec.offspring_means
    return MeanMatrix(values=np.outer(means, spec.alpha))


def spectral_radius(matrix: MeanMatrix | np.ndarray, *, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Perron root of a nonnegative matrix by power iteration.

    Starts from the all-ones vector; converges when two successive dominant
    eigenvalue estimates agree within `tol`. For the rank-one mean matrices
    of this model the exact value sum_i alpha_i E[L^i] is reached after two
    iterations. Raises ConvergenceFailure on oscillating (pathological) input.
    """
    m = matrix.values if isinstance(matrix, MeanMatrix) else np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if np.any(m < 0):
        raise ValueError("matrix must be nonnegative")
    x = np.ones(m.shape[0])
    lam_prev = -1.0
    for _ in range(max_iter):
        y = m @ x
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 0.0
        lam = norm / float(np.linalg.norm(x))
        if abs(lam - lam_prev) < tol:
            return lam
        lam_prev = lam
        x = y / norm
    raise ConvergenceFailure(f"power iteration did not settle in {max_iter} iterations")
