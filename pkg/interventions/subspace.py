"""
Subspace algebra at a residual-stream tap.

Vectors are d-vectors or n×d row batches; a basis B is d×k with orthonormal columns,
so project(v) = B·Bᵀ·v and complement_project(v) = v − B·Bᵀ·v.
"""
import logging
from dataclasses import dataclass

import numpy as np

import config
from errors import ContractViolation
from numerics import OrthonormalBasis, qr_orthonormalize

logger = logging.getLogger(__name__)

PROVENANCES = ("trained", "random", "planted", "full", "empty")
SCOPES = ("batch", "variants")
VARIANT_GROUP = len(config.RACES)


@dataclass(frozen=True)
class Subspace:
    basis: OrthonormalBasis
    tap: tuple                 # (layer, position)
    provenance: str = "trained"

    def __post_init__(self):
        if len(self.tap) != 2:
            raise ContractViolation("tap must be (layer, position)", tap=str(self.tap))
        layer, position = (int(x) for x in self.tap)
        if layer < 0 or not 0 <= position < config.CONTEXT_LENGTH:
            raise ContractViolation("tap outside the residual-stream grid", layer=layer, position=position)
        if self.provenance not in PROVENANCES:
            raise ContractViolation(f"unknown subspace provenance '{self.provenance}'", provenance=self.provenance)
        object.__setattr__(self, "tap", (layer, position))

    @property
    def d(self):
        return self.basis.ambient_dim

    @property
    def k(self):
        return self.basis.k

    @property
    def layer(self):
        return self.tap[0]

    @property
    def position(self):
        return self.tap[1]

    def at(self, tap):
        """The same basis attached to another tap."""
        return Subspace(self.basis, tap, self.provenance)


def _check_vectors(s, v, what="vector"):
    v = np.asarray(v)
    if v.ndim not in (1, 2) or v.shape[-1] != s.d:
        raise ContractViolation(f"{what} must have trailing dimension {s.d}", shape=list(v.shape), d=s.d)
    return v


def project(s, v):
    v = _check_vectors(s, v)
    basis = s.basis.columns
    return (v @ basis) @ basis.T


def complement_project(s, v):
    v = _check_vectors(s, v)
    return v - project(s, v)


def dii_replace(target_rep, source_rep, s):
    """Target's complement component plus source's subspace component."""
    target_rep = _check_vectors(s, target_rep, "target")
    source_rep = _check_vectors(s, source_rep, "source")
    if target_rep.shape != source_rep.shape:
        raise ContractViolation("target and source shapes differ",
                                target=list(target_rep.shape), source=list(source_rep.shape))
    return complement_project(s, target_rep) + project(s, source_rep)


def _group_means(reps, scope):
    if scope == "batch":
        return np.broadcast_to(reps.mean(axis=0), reps.shape)
    if scope == "variants":
        if len(reps) % VARIANT_GROUP:
            raise ContractViolation(f"per-profile averaging needs {VARIANT_GROUP}-variant blocks",
                                    batch=len(reps))
        blocks = reps.reshape(-1, VARIANT_GROUP, reps.shape[-1])
        return np.repeat(blocks.mean(axis=1), VARIANT_GROUP, axis=0)
    raise ContractViolation(f"unknown averaging scope '{scope}'", scope=scope)


def batch_race_average(reps, s, scope="batch"):
    """Replace each rep's subspace component by its group's mean subspace component."""
    reps = _check_vectors(s, np.atleast_2d(reps), "reps")
    if len(reps) == 0:
        raise ContractViolation("race averaging needs a nonempty batch")
    return complement_project(s, reps) + project(s, _group_means(reps, scope))


def full_average(reps):
    reps = np.atleast_2d(np.asarray(reps))
    if len(reps) == 0:
        raise ContractViolation("full averaging needs a nonempty batch")
    return np.repeat(reps.mean(axis=0, keepdims=True), len(reps), axis=0)


def random_subspace(d, k, rng, tap=(0, 0)):
    """
    :param rng: a numpy Generator or an integer seed.
    """
    if not 1 <= k <= d:
        raise ContractViolation("random subspace needs 1 ≤ k ≤ d", d=d, k=k)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return Subspace(qr_orthonormalize(rng.standard_normal((d, k))), tap, "random")


def full_subspace(d, tap):
    return Subspace(OrthonormalBasis(d, np.eye(d, dtype=np.float32)), tap, "full")


def empty_subspace(d, tap):
    return Subspace(OrthonormalBasis.empty(d), tap, "empty")
