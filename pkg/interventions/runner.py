import logging
from dataclasses import dataclass

import numpy as np

from errors import ContractViolation
from interventions.InterventionRegistry import default_registry
from interventions.subspace import SCOPES
from numerics import kernel_eval
from refmodel.transformer import decide_batch, forward_prompts

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InterventionSpec:
    kind: str
    subspace: object = None          # Subspace; None only for kinds without one
    scope: str = "batch"
    tap: tuple = None                # required when there is no subspace

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise ContractViolation(f"unknown averaging scope '{self.scope}'", scope=self.scope)
        if self.subspace is None and self.tap is None:
            raise ContractViolation(f"{self.kind} needs a subspace or an explicit tap", kind=self.kind)

    @property
    def location(self):
        return self.subspace.tap if self.subspace is not None else tuple(self.tap)

    def to_dict(self):
        return {
            "kind": self.kind,
            "scope": self.scope,
            "tap": list(self.location),
            "k": self.subspace.k if self.subspace is not None else None,
            "provenance": self.subspace.provenance if self.subspace is not None else None,
        }


@dataclass(frozen=True)
class InterventionResult:
    decisions: list
    logits: np.ndarray        # n×2 (Yes, No)
    traces: np.ndarray        # (L+1)×n×T×d, or None


def _validate(model, spec, entry):
    cfg = model.config
    if entry["needs_subspace"] and spec.subspace is None:
        raise ContractViolation(f"{spec.kind} needs a subspace", kind=spec.kind)
    if entry["provenance"] and spec.subspace.provenance != entry["provenance"]:
        raise ContractViolation(f"{spec.kind} needs a {entry['provenance']} subspace",
                                kind=spec.kind, provenance=spec.subspace.provenance)
    layer, position = spec.location
    if not 0 <= layer <= cfg.layers or not 0 <= position < cfg.context_length:
        raise ContractViolation("tap outside the model's residual-stream grid", layer=layer, position=position,
                                layers=cfg.layers)
    if spec.subspace is not None and spec.subspace.d != cfg.width:
        raise ContractViolation("subspace dimension differs from the model width",
                                d=spec.subspace.d, width=cfg.width)


def tap_activations(model, prompts, tap):
    """n×d residual-stream activations at one (layer, position)."""
    layer, position = tap
    captured = {}

    def capture(at_layer, h):
        if at_layer == layer:
            captured["reps"] = np.array(h.data[:, position, :])
        return h

    forward_prompts(model, prompts, hook=capture)
    return captured["reps"]


def run_with_intervention(model, prompts, spec, source_prompts=None, keep_traces=False, registry=None):
    """
    Forward the prompts with the intervention's transform applied at its tap and nowhere else.

    Batch-statistic kinds average over exactly this call's prompts, so the whole
    averaging group must be passed at once.
    """
    entry = (registry or default_registry()).get(spec.kind)
    _validate(model, spec, entry)
    prompts = list(prompts)
    if not prompts:
        raise ContractViolation("no prompts to intervene on")

    sources = None
    if entry["needs_sources"]:
        if source_prompts is None or len(source_prompts) != len(prompts):
            raise ContractViolation(f"{spec.kind} needs one source prompt per target prompt", kind=spec.kind)
        sources = tap_activations(model, list(source_prompts), spec.location)

    layer, position = spec.location
    positions = np.full(len(prompts), position)

    def intervene(at_layer, h):
        if at_layer != layer:
            return h
        reps = h.data[:, position, :]
        replaced = entry["transform"](reps, spec.subspace, sources=sources, scope=spec.scope)
        return kernel_eval("splice", h, np.asarray(replaced, dtype=h.dtype), positions=positions)

    logits, trace = forward_prompts(model, prompts, hook=intervene, keep_trace=keep_traces)
    logger.debug(f"🧪 {spec.kind} at tap {spec.location} over {len(prompts)} prompts")
    return InterventionResult(decide_batch(logits), np.array(logits.data), trace)
