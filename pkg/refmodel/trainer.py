import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from tqdm import tqdm

import config
from errors import ContractViolation, NumericDomainError, TrainingDivergenceError
from numerics import Adam, LinearWarmupSchedule, Tape, backward, kernel_eval
from refmodel.transformer import ReferenceModel, decide_prompts, embed, init_params, readout, run_blocks, summarize
from tasks.panels import make_training_set

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    train_size: int = config.TRAIN_SET_SIZE
    heldout_size: int = config.HELDOUT_SIZE
    batch_size: int = config.TRAIN_BATCH_SIZE
    learning_rate: float = config.TRAIN_LEARNING_RATE
    max_epochs: int = config.TRAIN_MAX_EPOCHS
    target_agreement: float = config.TRAIN_TARGET_AGREEMENT
    warmup_fraction: float = config.TRAIN_WARMUP_FRACTION
    template_mix: dict = field(default_factory=lambda: dict(config.TRAIN_TEMPLATE_MIX))

    def __post_init__(self):
        if self.train_size < 1 or self.heldout_size < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ContractViolation("training sizes and epoch budget must be positive", **{
                k: v for k, v in asdict(self).items() if k != "template_mix"})

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingReport:
    epochs: int
    steps: int
    final_loss: float
    heldout_agreement: float
    history: list

    def to_dict(self):
        return asdict(self)


def batch_loss(model_config, weights, tokens, final_positions, labels):
    """Mean cross-entropy of the final-position vocabulary logits against the Yes/No label tokens."""
    # Causal attention: nothing after the last ASK can reach any readout.
    tokens = tokens[:, :int(final_positions.max()) + 1]
    h = embed(weights, tokens)
    h = run_blocks(weights, model_config, h, 0)
    logits = readout(weights, model_config, h, final_positions, full_vocab=True)
    targets = np.zeros(logits.shape, dtype=np.float32)
    label_tokens = np.where(labels == 1, model_config.yes_token, model_config.no_token)
    targets[np.arange(len(labels)), label_tokens] = 1.0
    return kernel_eval("cross_entropy", logits, targets)


def agreement(model, training_set):
    decisions = decide_prompts(model, list(training_set.prompts))
    expected = ["Yes" if label == 1 else "No" for label in training_set.labels]
    return float(np.mean([a == b for a, b in zip(decisions, expected)]))


def train_reference(model_config, train_config, spec, rule, seed, show_progress=True):
    """
    Fit a fresh model to the teacher rule.

    Identical (configs, rule, seed) give bit-identical weights.

    :return: (ReferenceModel, TrainingReport)
    :raises TrainingDivergenceError: non-finite loss, or the agreement target is missed
            after the epoch budget.
    """
    if spec.family != rule.family:
        raise ContractViolation("task family and teacher rule disagree", spec=spec.family, rule=rule.family)
    rng = np.random.default_rng(seed)
    train_set = make_training_set(spec, rule, train_config.train_size, train_config.template_mix, rng)
    heldout = make_training_set(spec, rule, train_config.heldout_size, train_config.template_mix, rng)
    tokens = np.array([p.tokens for p in train_set.prompts], dtype=np.int64)
    finals = np.array([p.final_position for p in train_set.prompts], dtype=np.int64)

    optimizer = Adam(init_params(model_config, rng))
    steps_per_epoch = -(-len(train_set) // train_config.batch_size)
    schedule = LinearWarmupSchedule(train_config.learning_rate, steps_per_epoch * train_config.max_epochs,
                                    train_config.warmup_fraction)
    logger.info(f"🧠 Training reference model: {summarize(ReferenceModel(model_config, optimizer.params))['parameters']} "
                f"parameters, {len(train_set)} examples, {steps_per_epoch} steps/epoch")

    history = []
    step = 0
    loss_value = float("nan")
    for epoch in range(train_config.max_epochs):
        order = rng.permutation(len(train_set))
        batches = range(0, len(order), train_config.batch_size)
        epoch_losses = []
        for start in tqdm(batches, desc=f"epoch {epoch + 1}", leave=False, disable=not show_progress):
            index = order[start:start + train_config.batch_size]
            tape = Tape()
            weights = {name: tape.leaf(value, name) for name, value in optimizer.params.items()}
            try:
                loss = batch_loss(model_config, weights, tokens[index], finals[index], train_set.labels[index])
            except NumericDomainError as e:
                raise TrainingDivergenceError(f"training diverged at step {step}: {e.message}",
                                              step=step, epoch=epoch + 1)
            loss_value = float(loss.data[0])
            optimizer.step(backward(tape, loss), schedule(step))
            epoch_losses.append(loss_value)
            logger.debug(f"step {step}: loss {loss_value:.4f}")
            step += 1

        model = ReferenceModel(model_config, optimizer.params)
        score = agreement(model, heldout)
        history.append({"epoch": epoch + 1, "loss": float(np.mean(epoch_losses)), "heldout_agreement": score})
        logger.info(f"🧠 Epoch {epoch + 1}: loss {np.mean(epoch_losses):.4f}, held-out agreement {score:.4f}")
        if score >= train_config.target_agreement:
            logger.info(f"✅ Agreement target {train_config.target_agreement} reached after {epoch + 1} epochs")
            return model, TrainingReport(epoch + 1, step, loss_value, score, history)

    logger.error(f"❌ Agreement {history[-1]['heldout_agreement']:.4f} below target after "
                 f"{train_config.max_epochs} epochs")
    raise TrainingDivergenceError("held-out agreement target not reached",
                                  agreement=history[-1]["heldout_agreement"],
                                  target=train_config.target_agreement,
                                  epochs=train_config.max_epochs, final_loss=loss_value)
