from tasks.roster import NameRoster, load_institutions, load_roster, race_of_name
from tasks.task_spec import (
    DEGREE_LEVELS,
    Profile,
    TaskSpec,
    make_task_spec,
    race_variants,
    sample_profile,
)
from tasks.encoding import (
    SUFFIX_STRATEGIES,
    EncodedPrompt,
    append_fairness_suffix,
    decode,
    gpa_bucket,
    render_prompt,
    token_name,
)
from tasks.panels import PanelRow, TrainingSet, make_eval_panel, make_training_set, panel_prompts
from tasks.CounterfactualSampler import (
    BEHAVIOR_CLASSES,
    CounterfactualPair,
    CounterfactualSampler,
    PairSplits,
    behavior_class,
    make_counterfactual_pairs,
    split_pairs,
)
from tasks.dataset_io import dump_panel_jsonl, dump_pairs_jsonl, load_pairs_jsonl
