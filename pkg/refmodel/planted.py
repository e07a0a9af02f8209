"""
Hand-wired one-block model with a known race subspace.

Unrotated layout: race code in dims 0..k*-1, the teacher score contribution in
dim k*, a slack dim holding every embedding at RMS 1. Query/key weights are zero,
so attention pools the prompt uniformly into the final token; the head reads
race·a + score. A seeded global rotation then hides the coordinate axes.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

import config
from errors import ContractViolation
from numerics import OrthonormalBasis, qr_orthonormalize
from refmodel.transformer import ModelConfig, ReferenceModel, param_shapes
from tasks.encoding import gpa_of_bucket, institution_token, name_token, race_token
from tasks.roster import race_of_name

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlantedModel:
    model: ReferenceModel
    race_basis: OrthonormalBasis      # span of the race codes
    score_direction: np.ndarray       # unit d-vector carrying Σ w·z − τ
    readout_direction: np.ndarray     # the part of the race span the head reads


def _race_codes(k_star, rng):
    """One unit code per race; equal norms keep every name embedding's slack identical."""
    codes = rng.standard_normal((len(config.RACES), k_star))
    return codes / np.linalg.norm(codes, axis=1, keepdims=True)


def _qualification_rows(family, rule, spec):
    """(token id, score contribution) for every qualification token of the family."""
    rows = []
    if family == "admissions":
        gpa, ecs, letters = spec.domains
        for bucket in range(config.N_GPA_BUCKETS):
            rows.append((config.GPA_BASE + bucket, rule.weights[0] * gpa.normalize(gpa_of_bucket(bucket))))
        rows += [(config.EC_BASE + v, rule.weights[1] * ecs.normalize(v)) for v in range(ecs.size)]
        rows += [(config.LET_BASE + v, rule.weights[2] * letters.normalize(v)) for v in range(letters.size)]
    else:
        experience, degree, referrals = spec.domains
        rows += [(config.EXP_BASE + v, rule.weights[0] * experience.normalize(v)) for v in range(experience.size)]
        rows += [(config.DEG_BASE + v, rule.weights[1] * degree.normalize(v)) for v in range(degree.size)]
        rows += [(config.REF_BASE + v, rule.weights[2] * referrals.normalize(v)) for v in range(referrals.size)]
    return rows


def build_planted_model(family, rule, k_star=8, d=32, seed=0, heads=4):
    """
    :return: PlantedModel whose decisions equal rule.label.
    """
    if rule.family != family:
        raise ContractViolation("teacher rule family does not match", family=family, rule=rule.family)
    if k_star + 2 > d:
        raise ContractViolation("planted model needs d ≥ k* + 2", k_star=k_star, d=d)
    spec = rule.spec
    rng = np.random.default_rng(seed)
    score_dim, slack_dim = k_star, k_star + 1
    cfg = ModelConfig(layers=1, width=d, heads=heads)

    codes = _race_codes(k_star, rng)
    betas = np.array([rule.offsets[race] for race in config.RACES])
    readout = np.linalg.lstsq(codes, betas, rcond=None)[0]       # codes @ readout == betas

    emb = np.zeros((cfg.vocab_size, d))
    for name_id in range(len(config.RACES) * config.NAMES_PER_RACE):
        emb[name_token(name_id), :k_star] = codes[config.RACES.index(race_of_name(name_id))]
    for index, race in enumerate(config.RACES):
        emb[race_token(race), :k_star] = codes[index]
    for token, contribution in _qualification_rows(family, rule, spec):
        emb[token, score_dim] = contribution
    for index, tau in enumerate(rule.thresholds):
        emb[institution_token(family, index), score_dim] = -tau
    emb[:, slack_dim] = np.sqrt(d - np.sum(emb ** 2, axis=1))

    signal = np.zeros((d, d))
    signal[np.arange(score_dim + 1), np.arange(score_dim + 1)] = 1.0
    head_vector = np.zeros(d)
    head_vector[:k_star] = readout
    head_vector[score_dim] = 1.0

    rotation = qr_orthonormalize(rng.standard_normal((d, d))).columns.astype(np.float64)
    params = OrderedDict((name, np.zeros(shape)) for name, shape in param_shapes(cfg).items())
    params["tok_emb"] = emb @ rotation.T
    params["blocks.0.ln1"] = np.ones(d)
    params["blocks.0.ln2"] = np.ones(d)
    params["blocks.0.wv"] = rotation @ signal @ rotation.T
    params["blocks.0.wo"] = np.eye(d)
    params["ln_f"] = np.ones(d)
    head = np.zeros((d, cfg.vocab_size))
    head[:, cfg.yes_token] = rotation @ head_vector
    head[:, cfg.no_token] = -(rotation @ head_vector)
    params["head"] = head

    model = ReferenceModel(cfg, OrderedDict((k, v.astype(np.float32)) for k, v in params.items()))
    readout_direction = rotation[:, :k_star] @ (readout / max(np.linalg.norm(readout), 1e-12))
    logger.info(f"✅ Planted {family} model built: d={d}, k*={k_star}, |a|={np.linalg.norm(readout):.4f}")
    return PlantedModel(model, OrthonormalBasis(d, rotation[:, :k_star]),
                        rotation[:, score_dim].astype(np.float32), readout_direction.astype(np.float32))
