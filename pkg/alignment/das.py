"""
Distributed alignment search at one residual-stream tap.

The searched rotation is Q = Q0·cayley(S): Q0 a seeded random frame, S skew-symmetric
from its strict upper triangle (zero at start). With "qr" orthogonality the frame itself
is the parameter, retracted onto the orthonormal frames after every optimizer step.
Fixed-k mode intervenes on Q's first k columns; mask mode gates every column with
sigmoid(logit / temperature) and keeps the columns whose gate ends above the threshold.
"""
import logging
from dataclasses import asdict, dataclass

import numpy as np
from tqdm import tqdm

import config
from errors import ContractViolation, NumericDomainError, TrainingDivergenceError
from interventions.subspace import Subspace
from numerics import (
    Adam,
    LinearWarmupSchedule,
    OrthonormalBasis,
    Tape,
    backward,
    constant,
    kernel_eval,
    orthonormality_residual,
    qr_orthonormalize,
    retract,
)
from refmodel.transformer import decide_batch, forward_prompts, readout, run_blocks

logger = logging.getLogger(__name__)

ORTHOGONALITY_MODES = ("cayley", "qr")


@dataclass(frozen=True)
class DasConfig:
    k: int = None                     # None → d // 4
    mask_mode: bool = False
    epochs: int = config.DAS_EPOCHS
    batch_size: int = config.DAS_BATCH_SIZE
    rotation_lr: float = config.DAS_ROTATION_LR
    mask_lr: float = config.DAS_MASK_LR
    warmup_fraction: float = config.DAS_WARMUP_FRACTION
    temperature: tuple = config.DAS_MASK_TEMPERATURE
    threshold: float = config.DAS_MASK_THRESHOLD
    mask_sparsity: float = config.DAS_MASK_SPARSITY
    orthogonality: str = config.DAS_ORTHOGONALITY

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractViolation("DAS epochs and batch size must be positive",
                                    epochs=self.epochs, batch_size=self.batch_size)
        start, end = self.temperature
        if not 0 < end <= start:
            raise ContractViolation("mask temperature must anneal from a larger to a smaller positive value",
                                    start=start, end=end)
        if self.orthogonality not in ORTHOGONALITY_MODES:
            raise ContractViolation(f"unknown orthogonality mode '{self.orthogonality}'",
                                    orthogonality=self.orthogonality)
        if self.mask_sparsity < 0:
            raise ContractViolation("mask sparsity must be non-negative", mask_sparsity=self.mask_sparsity)
        object.__setattr__(self, "temperature", (float(start), float(end)))

    def dimension(self, d):
        k = d // 4 if self.k is None else self.k
        if not self.mask_mode and not 1 <= k <= d:
            raise ContractViolation("subspace dimension must satisfy 1 ≤ k ≤ d", k=k, d=d)
        return k

    def to_dict(self):
        record = asdict(self)
        record["temperature"] = list(self.temperature)
        return record

    @classmethod
    def from_dict(cls, record):
        record = dict(record)
        if "temperature" in record:
            record["temperature"] = tuple(record["temperature"])
        return cls(**record)


class RotationParam:
    """
    Trainable state: the rotation parameter, optional mask logits, the fixed base frame.

    Cayley mode trains the skew upper triangle `upper`; qr mode trains the frame `frame`
    directly and relies on retract() after each step.
    """

    def __init__(self, d, rng, mask_mode=False, orthogonality="cayley"):
        self.d = d
        self.orthogonality = orthogonality
        self.base = qr_orthonormalize(rng.standard_normal((d, d))).columns
        self.upper = np.zeros(d * (d - 1) // 2, dtype=np.float32)
        self.frame = self.base.copy() if orthogonality == "qr" else None
        self.mask_logits = np.zeros(d, dtype=np.float32) if mask_mode else None

    @property
    def state(self):
        return self.frame if self.orthogonality == "qr" else self.upper

    @state.setter
    def state(self, value):
        if self.orthogonality == "qr":
            self.frame = value
        else:
            self.upper = value

    def arrays(self):
        arrays = {"rotation": self.state}
        if self.mask_logits is not None:
            arrays["mask"] = self.mask_logits
        return arrays

    def rotation_tensor(self, state):
        if self.orthogonality == "qr":
            return constant(state)
        skew = kernel_eval("skew_from_upper", state, d=self.d)
        return kernel_eval("matmul", self.base.astype(skew.dtype), kernel_eval("cayley", skew))

    def rotation(self):
        return self.rotation_tensor(self.state).data

    def gates(self, temperature):
        return 1.0 / (1.0 + np.exp(-self.mask_logits.astype(np.float64) / temperature))

    def basis(self, k=None, threshold=config.DAS_MASK_THRESHOLD, temperature=None):
        """Fixed mode: first k columns. Mask mode: columns whose gate exceeds the threshold."""
        q = self.rotation()
        if self.mask_logits is None:
            return OrthonormalBasis(self.d, q[:, :k])
        keep = np.flatnonzero(self.gates(temperature) > threshold)
        return OrthonormalBasis(self.d, q[:, keep])


# ---------- TAP CACHE ----------

@dataclass(frozen=True)
class TapCache:
    """
    Clean residual streams of every pair's target and source prompt, (L+1)×N×T×d each.
    Built once per pair set and shared read-only by every tap that trains on it.
    """
    targets: np.ndarray
    sources: np.ndarray
    final_positions: np.ndarray
    counterfactual: np.ndarray      # 1 = Yes
    base: np.ndarray
    institutions: np.ndarray

    @classmethod
    def build(cls, model, pairs, batch_size=256):
        if not pairs:
            raise ContractViolation("cannot cache an empty pair set")
        target_chunks, source_chunks = [], []
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start:start + batch_size]
            target_chunks.append(forward_prompts(model, [p.target for p in chunk], keep_trace=True)[1])
            source_chunks.append(forward_prompts(model, [p.source for p in chunk], keep_trace=True)[1])
        return cls(
            targets=np.concatenate(target_chunks, axis=1),
            sources=np.concatenate(source_chunks, axis=1),
            final_positions=np.array([p.target.final_position for p in pairs], dtype=np.int64),
            counterfactual=np.array([p.counterfactual_label == "Yes" for p in pairs], dtype=np.int64),
            base=np.array([p.base_label == "Yes" for p in pairs], dtype=np.int64),
            institutions=np.array([p.institution for p in pairs], dtype=np.int64),
        )

    def __len__(self):
        return len(self.final_positions)

    def subset(self, index):
        index = np.asarray(index)
        return TapCache(self.targets[:, index], self.sources[:, index], self.final_positions[index],
                        self.counterfactual[index], self.base[index], self.institutions[index])


def _one_hot_labels(labels, dtype):
    """Column 0 = Yes, column 1 = No."""
    targets = np.zeros((len(labels), 2), dtype=dtype)
    targets[np.arange(len(labels)), np.where(labels == 1, 0, 1)] = 1.0
    return targets


def intervened_logits(model, cache, tap, projector):
    """
    Yes/No logits after replacing each target's tap row by row + projector(source row − row).

    :param projector: Tensor/array → Tensor mapping N×d differences to their subspace component.
    """
    layer, position = tap
    length = int(max(cache.final_positions.max(), position)) + 1
    stream = cache.targets[layer][:, :length]
    rows = stream[:, position]
    diff = cache.sources[layer][:, position] - rows
    replaced = kernel_eval("add", rows, projector(diff))
    h = kernel_eval("splice", stream, replaced, positions=np.full(len(cache), position))
    h = run_blocks(model.weights, model.config, h, layer)
    return readout(model.weights, model.config, h, cache.final_positions)


def basis_projector(columns):
    def project(diff):
        return kernel_eval("matmul", kernel_eval("matmul", diff, columns), kernel_eval("transpose", columns, axes=(1, 0)))
    return project


def das_loss(model, param, cache, tap, k=None, temperature=None, upper=None, mask_logits=None, sparsity=0.0):
    """
    Mean two-way cross-entropy of the DII-intervened Yes/No logits against the
    counterfactual labels.

    :param upper, mask_logits: tape leaves (or arrays) standing in for param's rotation state
                               (the frame in qr mode) and mask logits.
    :param sparsity: weight of the mean-gate penalty in mask mode; 0 leaves the loss as is.
    """
    upper = param.state if upper is None else upper
    rotation = param.rotation_tensor(upper)
    if param.mask_logits is None:
        columns = kernel_eval("take", rotation, index=np.arange(k), axis=1)
        projector = basis_projector(columns)
        gates = None
    else:
        logits = param.mask_logits if mask_logits is None else mask_logits
        gates = kernel_eval("sigmoid", kernel_eval("scale", logits, factor=1.0 / temperature))

        def projector(diff):
            coords = kernel_eval("mul", kernel_eval("matmul", diff, rotation), gates)
            return kernel_eval("matmul", coords, kernel_eval("transpose", rotation, axes=(1, 0)))

    logits_yes_no = intervened_logits(model, cache, tap, projector)
    loss = kernel_eval("cross_entropy", logits_yes_no, _one_hot_labels(cache.counterfactual, logits_yes_no.dtype))
    if gates is not None and sparsity:
        d = param.d
        total = kernel_eval("matmul", kernel_eval("reshape", gates, shape=(1, d)), np.ones((d, 1), dtype=gates.dtype))
        loss = kernel_eval("add", loss, kernel_eval("scale", kernel_eval("reshape", total, shape=(1,)),
                                                    factor=sparsity / d))
    return loss


def annealed_temperature(step, total_steps, temperature):
    """Geometric schedule from temperature[0] at step 0 to temperature[1] at the last step."""
    start, end = temperature
    if total_steps <= 1:
        return end
    return start * (end / start) ** (step / (total_steps - 1))


def iia_from_cache(model, basis, cache, tap, batch_size=512):
    """Fraction of pairs whose DII-intervened decision equals the counterfactual label."""
    if len(cache) == 0:
        raise ContractViolation("IIA needs at least one pair")
    columns = basis.columns
    hits = 0
    for start in range(0, len(cache), batch_size):
        part = cache.subset(np.arange(start, min(start + batch_size, len(cache))))
        decisions = decide_batch(intervened_logits(model, part, tap, basis_projector(columns)))
        hits += sum((d == "Yes") == bool(label) for d, label in zip(decisions, part.counterfactual))
    return hits / len(cache)


def train_das(model, train_cache, dev_cache, tap, das_config, seed, show_progress=False):
    """
    :return: (Subspace, log rows); each row holds step, loss, lr, orthonormality residual,
             temperature (mask mode) and, at epoch ends, dev IIA.
    :raises TrainingDivergenceError: a non-finite loss or gradient, with the step index.
    """
    d = model.config.width
    layer, position = tap
    if not 0 <= layer <= model.config.layers:
        raise ContractViolation("tap layer outside the model", layer=layer, layers=model.config.layers)
    k = das_config.dimension(d)
    rng = np.random.default_rng(seed)
    param = RotationParam(d, rng, mask_mode=das_config.mask_mode, orthogonality=das_config.orthogonality)

    steps_per_epoch = -(-len(train_cache) // das_config.batch_size)
    total_steps = steps_per_epoch * das_config.epochs
    rotation_opt = Adam({"rotation": param.state})
    rotation_lr = LinearWarmupSchedule(das_config.rotation_lr, total_steps, das_config.warmup_fraction)
    mask_opt = mask_lr = None
    if das_config.mask_mode:
        mask_opt = Adam({"mask": param.mask_logits})
        mask_lr = LinearWarmupSchedule(das_config.mask_lr, total_steps, das_config.warmup_fraction)

    log = []
    step = 0
    temperature = das_config.temperature[0]
    for epoch in range(das_config.epochs):
        order = rng.permutation(len(train_cache))
        batches = range(0, len(order), das_config.batch_size)
        for start in tqdm(batches, desc=f"DAS {tap}", leave=False, disable=not show_progress):
            batch = train_cache.subset(order[start:start + das_config.batch_size])
            temperature = annealed_temperature(step, total_steps, das_config.temperature)
            tape = Tape()
            upper = tape.leaf(rotation_opt.params["rotation"], "rotation")
            mask = tape.leaf(mask_opt.params["mask"], "mask") if mask_opt else None
            try:
                loss = das_loss(model, param, batch, tap, k=k, temperature=temperature, upper=upper,
                                mask_logits=mask, sparsity=das_config.mask_sparsity)
                grads = backward(tape, loss)
                rotation_opt.step({"rotation": grads["rotation"]}, rotation_lr(step))
                if param.orthogonality == "qr":
                    rotation_opt.params["rotation"][...] = retract(rotation_opt.params["rotation"]).columns
                if mask_opt:
                    mask_opt.step({"mask": grads["mask"]}, mask_lr(step))
            except NumericDomainError as e:
                logger.error(f"❌ DAS diverged at tap {tap}, step {step}: {e.message}")
                raise TrainingDivergenceError(f"DAS diverged at step {step}: {e.message}", step=step,
                                              layer=layer, position=position)
            param.state = rotation_opt.params["rotation"]
            if mask_opt:
                param.mask_logits = mask_opt.params["mask"]

            row = {"step": step, "epoch": epoch + 1, "loss": float(loss.data[0]), "lr": rotation_lr(step),
                   "orthonormality_residual": orthonormality_residual(param.rotation())}
            if das_config.mask_mode:
                row["temperature"] = temperature
                row["mask_lr"] = mask_lr(step)
            log.append(row)
            step += 1

        basis = param.basis(k, das_config.threshold, temperature)
        log[-1]["dev_iia"] = iia_from_cache(model, basis, dev_cache, tap)
        logger.info(f"🧠 DAS tap {tap} epoch {epoch + 1}: loss {log[-1]['loss']:.4f}, "
                    f"dev IIA {log[-1]['dev_iia']:.4f}, k={basis.k}")

    basis = param.basis(k, das_config.threshold, temperature)
    return Subspace(basis, tap, "trained"), log
