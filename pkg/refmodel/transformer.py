"""
Pre-norm decoder-only transformer over the tape kernels.

Residual-stream layer ℓ is the stream after ℓ blocks (layer 0 = embeddings).
A hook(layer, h) sees every layer's stream and may return a replacement; that is
how interventions and tap reads plug in.
"""
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

import config
from errors import ContractViolation, NumericDomainError
from numerics import Tape, constant, kernel_eval

logger = logging.getLogger(__name__)

MASK_VALUE = -1e9


@dataclass(frozen=True)
class ModelConfig:
    layers: int = config.MODEL_LAYERS
    width: int = config.MODEL_WIDTH
    heads: int = config.MODEL_HEADS
    vocab_size: int = config.VOCAB_SIZE
    context_length: int = config.CONTEXT_LENGTH
    yes_token: int = config.YES_TOKEN
    no_token: int = config.NO_TOKEN

    def __post_init__(self):
        if self.layers < 1 or self.width < 1 or self.heads < 1:
            raise ContractViolation("model dimensions must be positive", **asdict(self))
        if self.width % self.heads:
            raise ContractViolation("width must be divisible by heads", width=self.width, heads=self.heads)
        if self.context_length != config.CONTEXT_LENGTH:
            raise ContractViolation("context length must match the prompt encoding",
                                    context_length=self.context_length)
        if not (0 <= self.yes_token < self.vocab_size and 0 <= self.no_token < self.vocab_size):
            raise ContractViolation("Yes/No tokens outside the vocabulary")

    @property
    def head_dim(self):
        return self.width // self.heads

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, record):
        return cls(**{key: int(value) for key, value in record.items()})


def param_shapes(cfg):
    d, v = cfg.width, cfg.vocab_size
    shapes = OrderedDict()
    shapes["tok_emb"] = (v, d)
    shapes["pos_emb"] = (cfg.context_length, d)
    for layer in range(cfg.layers):
        prefix = f"blocks.{layer}."
        shapes[prefix + "ln1"] = (d,)
        for name in ("wq", "wk", "wv", "wo"):
            shapes[prefix + name] = (d, d)
        shapes[prefix + "ln2"] = (d,)
        shapes[prefix + "w1"] = (d, 4 * d)
        shapes[prefix + "b1"] = (4 * d,)
        shapes[prefix + "w2"] = (4 * d, d)
        shapes[prefix + "b2"] = (d,)
    shapes["ln_f"] = (d,)
    shapes["head"] = (d, v)
    return shapes


def init_params(cfg, rng, std=0.02):
    """Normal(0, std) matrices, residual projections scaled by 1/sqrt(2L); unit gains, zero biases."""
    params = OrderedDict()
    residual_std = std / math.sqrt(2 * cfg.layers)
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("ln1", "ln2", "ln_f"):
            params[name] = np.ones(shape, dtype=np.float32)
        elif leaf in ("b1", "b2"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            scale = residual_std if leaf in ("wo", "w2") else std
            params[name] = (rng.standard_normal(shape) * scale).astype(np.float32)
    return params


class ReferenceModel:
    """Immutable weights plus config; safe to share across threads."""

    def __init__(self, cfg, params):
        expected = param_shapes(cfg)
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ContractViolation("parameter set does not match the config",
                                    missing=",".join(missing), extra=",".join(extra))
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ContractViolation(f"parameter {name} has shape {params[name].shape}, expected {shape}",
                                        parameter=name)
        self.config = cfg
        self.weights = OrderedDict((name, constant(np.asarray(params[name], dtype=np.float32)))
                                   for name in expected)

    def arrays(self):
        return OrderedDict((name, tensor.data) for name, tensor in self.weights.items())

    def leaves(self, tape, trainable=True):
        return OrderedDict((name, tape.leaf(tensor.data, name, trainable=trainable))
                           for name, tensor in self.weights.items())

    @classmethod
    def zeros(cls, cfg):
        return cls(cfg, OrderedDict((name, np.zeros(shape, dtype=np.float32))
                                    for name, shape in param_shapes(cfg).items()))

    @classmethod
    def initialized(cls, cfg, rng):
        return cls(cfg, init_params(cfg, rng))


def causal_mask(length):
    return np.triu(np.full((length, length), MASK_VALUE, dtype=np.float32), k=1)


def embed(weights, tokens):
    tokens = np.asarray(tokens)
    tok = kernel_eval("embedding_gather", weights["tok_emb"], ids=tokens)
    pos = kernel_eval("take", weights["pos_emb"], index=np.arange(tokens.shape[1]), axis=0)
    return kernel_eval("add", tok, pos)


def _split_heads(x, batch, length, heads, head_dim, key=False):
    x = kernel_eval("reshape", x, shape=(batch, length, heads, head_dim))
    return kernel_eval("transpose", x, axes=(0, 2, 3, 1) if key else (0, 2, 1, 3))


def block(weights, cfg, layer, h):
    batch, length, d = h.shape
    p = f"blocks.{layer}."
    normed = kernel_eval("rms_normalize", h, weights[p + "ln1"])
    q = _split_heads(kernel_eval("matmul", normed, weights[p + "wq"]), batch, length, cfg.heads, cfg.head_dim)
    k = _split_heads(kernel_eval("matmul", normed, weights[p + "wk"]), batch, length, cfg.heads, cfg.head_dim,
                     key=True)
    v = _split_heads(kernel_eval("matmul", normed, weights[p + "wv"]), batch, length, cfg.heads, cfg.head_dim)

    scores = kernel_eval("scale", kernel_eval("matmul", q, k), factor=1.0 / math.sqrt(cfg.head_dim))
    scores = kernel_eval("add", scores, causal_mask(length))
    attn = kernel_eval("matmul", kernel_eval("row_softmax", scores), v)
    attn = kernel_eval("transpose", attn, axes=(0, 2, 1, 3))
    attn = kernel_eval("reshape", attn, shape=(batch, length, d))
    h = kernel_eval("add", h, kernel_eval("matmul", attn, weights[p + "wo"]))

    normed = kernel_eval("rms_normalize", h, weights[p + "ln2"])
    hidden = kernel_eval("gelu", kernel_eval("add", kernel_eval("matmul", normed, weights[p + "w1"]),
                                             weights[p + "b1"]))
    out = kernel_eval("add", kernel_eval("matmul", hidden, weights[p + "w2"]), weights[p + "b2"])
    return kernel_eval("add", h, out)


def run_blocks(weights, cfg, h, start_layer, hook=None, trace=None):
    """Run blocks start_layer..L-1 on the layer-`start_layer` stream h; the hook sees layers > start_layer."""
    for layer in range(start_layer, cfg.layers):
        h = block(weights, cfg, layer, h)
        if hook is not None:
            h = hook(layer + 1, h)
        if trace is not None:
            trace.append(h.data)
    return h


def readout(weights, cfg, h, final_positions, full_vocab=False):
    """Final-position logits: B×2 (Yes, No) by default, B×V with full_vocab."""
    final = kernel_eval("select_positions", h, positions=np.asarray(final_positions))
    final = kernel_eval("rms_normalize", final, weights["ln_f"])
    head = weights["head"]
    if not full_vocab:
        head = kernel_eval("take", head, index=np.array([cfg.yes_token, cfg.no_token]), axis=1)
    return kernel_eval("matmul", final, head)


@dataclass(frozen=True)
class TapTrace:
    """Residual-stream activations, (L+1) × positions × d, for one prompt."""
    activations: np.ndarray

    def at(self, layer, position):
        return self.activations[layer, position]

    @property
    def extent(self):
        return self.activations.shape[:2]


def forward_batch(model, tokens, final_positions, hook=None, keep_trace=False, weights=None):
    """
    Forward many prompts at once.

    :param weights: name → Tensor override (tape leaves during training); defaults to the model's constants.
    :return: (logits Tensor, trace array (L+1)×B×T×d or None)
    """
    cfg = model.config
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] > cfg.context_length:
        raise ContractViolation("tokens must be B×T with T ≤ context length", shape=list(tokens.shape))
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise ContractViolation("token id out of vocabulary", vocab=cfg.vocab_size, max_id=int(tokens.max()))
    weights = weights if weights is not None else model.weights

    h = embed(weights, tokens)
    if hook is not None:
        h = hook(0, h)
    trace = [h.data] if keep_trace else None
    h = run_blocks(weights, cfg, h, 0, hook=hook, trace=trace)
    logits = readout(weights, cfg, h, final_positions)
    return logits, (np.stack(trace) if keep_trace else None)


def forward_prompts(model, prompts, hook=None, keep_trace=False):
    tokens = np.array([p.tokens for p in prompts], dtype=np.int64)
    finals = np.array([p.final_position for p in prompts], dtype=np.int64)
    return forward_batch(model, tokens, finals, hook=hook, keep_trace=keep_trace)


def forward_with_taps(model, prompt):
    """(Yes/No logit pair, TapTrace) for one prompt of full context length."""
    if len(prompt.tokens) != model.config.context_length:
        raise ContractViolation("prompt length must equal the context length", length=len(prompt.tokens))
    logits, trace = forward_prompts(model, [prompt], keep_trace=True)
    return logits.data[0].copy(), TapTrace(trace[:, 0].copy())


def decide(logit_pair):
    """Yes iff logit(Yes) > logit(No); an exact tie is No."""
    yes, no = float(logit_pair[0]), float(logit_pair[1])
    if not (math.isfinite(yes) and math.isfinite(no)):
        raise NumericDomainError("non-finite logits", yes=yes, no=no)
    return "Yes" if yes > no else "No"


def decide_batch(logits):
    logits = np.asarray(logits.data if hasattr(logits, "data") else logits)
    if not np.all(np.isfinite(logits)):
        raise NumericDomainError("non-finite logits in batch")
    return ["Yes" if yes > no else "No" for yes, no in logits]


def decide_prompts(model, prompts, batch_size=512):
    """Decisions for any number of prompts, in input order."""
    decisions = []
    for start in range(0, len(prompts), batch_size):
        logits, _ = forward_prompts(model, prompts[start:start + batch_size])
        decisions.extend(decide_batch(logits))
    return decisions


def summarize(model):
    shapes = OrderedDict((name, list(t.shape)) for name, t in model.weights.items())
    count = int(sum(t.data.size for t in model.weights.values()))
    return {"parameters": count, "shapes": shapes, "config": model.config.to_dict()}
