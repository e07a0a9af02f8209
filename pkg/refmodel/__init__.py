from refmodel.transformer import (
    ModelConfig,
    ReferenceModel,
    TapTrace,
    decide,
    decide_batch,
    decide_prompts,
    forward_batch,
    forward_prompts,
    forward_with_taps,
    run_blocks,
    readout,
    summarize,
)
from refmodel.teacher_rule import (
    TeacherRule,
    acceptance_gap,
    calibrate_offsets,
    monte_carlo_gap,
    teacher_label,
)
from refmodel.trainer import TrainConfig, TrainingReport, train_reference
from refmodel.weights_io import load_weights, read_artifact, save_weights, write_artifact
from refmodel.planted import PlantedModel, build_planted_model
