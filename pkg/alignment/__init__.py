from alignment.das import (
    DasConfig,
    RotationParam,
    TapCache,
    annealed_temperature,
    das_loss,
    iia_from_cache,
    intervened_logits,
    train_das,
)
from alignment.iia import (
    baseline_iias,
    iia_by_institution,
    iia_eval,
    interchange_labels,
    interchange_oracle,
    layer_averaged_iia,
    trivial_iia,
    verify_pairs,
)
from alignment.SweepManager import SweepCell, SweepManager, SweepResult, location_sweep
