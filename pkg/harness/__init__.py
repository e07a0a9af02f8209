from harness.run_config import (
    FORMATS,
    SEED_LABELS,
    RunConfig,
    SplitConfig,
    TeacherConfig,
    TrialConfig,
    desk_das_config,
    parse_indices,
    parse_setting,
    parse_tap,
    setting_id,
)
from harness.artifacts import ArtifactLayout, best_tap_from_table
from harness.reports import AuditReport, emit_report, load_report, method_row, report_csv, report_svg
from harness.pipeline import (
    DEBIAS_METHODS,
    PROMPT_STRATEGIES,
    TRANSFERS,
    debias_rows,
    final_position,
    gen_data,
    load_model,
    run_debias,
    run_generalization,
    run_all,
    run_prompt_audit,
    sweep_stage,
    train_das_stage,
    train_ref,
    transfers,
)
