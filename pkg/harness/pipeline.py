"""
Pipeline stages behind the CLI subcommands. Each stage reads its prerequisites from
an ArtifactLayout, writes its own artifacts atomically and returns the reports to emit.
"""
import logging

import numpy as np

from alignment import TapCache, baseline_iias, iia_by_institution, iia_from_cache, location_sweep, train_das, verify_pairs
from errors import DependencyError, TransferError, UsageError
from file_helpers import read_json, require_file, write_json, write_jsonl
from harness.artifacts import ArtifactLayout, best_tap_from_table
from harness.reports import AuditReport, method_row
from harness.run_config import parse_setting
from interventions import InterventionSpec, Subspace, empty_subspace, load_subspace, random_subspace, run_with_intervention, save_subspace
from metrics import DecisionTable, metric_record, trial_aggregate
from numerics import OrthonormalBasis
from refmodel import TeacherRule, build_planted_model, calibrate_offsets, decide_prompts, load_weights, monte_carlo_gap, save_weights, train_reference
from seeds import derive_seed
from tasks import (
    dump_pairs_jsonl,
    dump_panel_jsonl,
    load_pairs_jsonl,
    load_roster,
    make_counterfactual_pairs,
    make_eval_panel,
    make_task_spec,
    panel_prompts,
    split_pairs,
)
from tasks.encoding import TEMPLATE_LAYOUTS

logger = logging.getLogger(__name__)

PROMPT_STRATEGIES = (
    ("none", "Original"),
    ("simple", "Simple"),
    ("noaff", "NoAffirmative"),
    ("very1", "Very(1)"),
    ("very2", "Very(2)"),
    ("very4", "Very(4)"),
    ("illegal", "Illegal"),
)
DEBIAS_METHODS = ("Original", "Race Avg", "Race Proj", "Full Avg", "Random Proj")
TRANSFERS = (
    ("admissions-free", "admissions-list"),
    ("admissions-free", "hiring-free"),
    ("admissions-free", "admissions-explicit"),
)


def final_position(template):
    return TEMPLATE_LAYOUTS[template].index("ASK")


def run_seeds(run_config):
    return {"master": run_config.seed, **run_config.seeds()}


def _report(run_config, name, kind, rows=None, extra=None):
    return AuditReport(name=name, kind=kind, config=run_config.to_dict(), seeds=run_seeds(run_config),
                       rows=rows or [], extra=extra or {})


# ---------- MODELS ----------

def build_teacher(run_config, family):
    rng = np.random.default_rng(derive_seed(run_config.seed, f"teacher-{family}"))
    if run_config.teacher.null:
        return TeacherRule.null(family, rng)
    rule = TeacherRule.default(family, rng)
    if run_config.teacher.calibrate:
        rule = calibrate_offsets(rule, rng, target_gap=run_config.teacher.target_gap, n=run_config.teacher.samples)
    return rule


def load_model(run_config, layout, family):
    """(model, teacher rule) for a family: the planted model, or the trained reference model on disk."""
    if run_config.planted:
        rule = build_teacher(run_config, family)
        planted = build_planted_model(family, rule, seed=run_config.seed_for("model"))
        return planted.model, rule
    model = load_weights(require_file(layout.model(family), f"reference model for {family} (run train-ref)"))
    rule = TeacherRule.from_dict(read_json(require_file(layout.teacher(family), "teacher rule")))
    return model, rule


# ---------- EVALUATION HELPERS ----------

def _decisions(model, prompts, intervention=None, source_prompts=None):
    if intervention is None:
        return decide_prompts(model, prompts)
    return run_with_intervention(model, prompts, intervention, source_prompts=source_prompts).decisions


def _panel(run_config, n_profiles, seed, suffix=None):
    spec = make_task_spec(run_config.family)
    return make_eval_panel(spec, load_roster(), n_profiles, run_config.template, seed,
                           suffix=run_config.suffix if suffix is None else suffix)


def _trials(run_config, model, intervention=None, suffix=None):
    """TrialSet over independent trial panels, or None when trials are off."""
    if run_config.trials.n_trials == 0:
        return None

    def runner(panel_size, seed):
        prompts = panel_prompts(_panel(run_config, panel_size, seed, suffix))
        return DecisionTable.from_decisions(_decisions(model, prompts, intervention), panel_size)

    return trial_aggregate(runner, run_config.trials.n_trials, run_config.trials.panel_size,
                           seed=run_config.seed_for("panel"))


def _method_record(run_config, model, prompts, baseline, intervention=None, suffix=None):
    table = DecisionTable.from_decisions(_decisions(model, prompts, intervention), run_config.n_profiles)
    trials = _trials(run_config, model, intervention, suffix)
    record = metric_record(table, baseline=baseline, p_matrix=trials.p_matrix if trials is not None else None,
                           seed=run_config.seed_for("panel"),
                           intervention=intervention.to_dict() if intervention is not None else None)
    if trials is not None:
        record["trial_ranking"] = list(trials.ranking)
        record["trial_favored"] = trials.favored
    return table, record


# ---------- STAGES ----------

def train_ref(run_config, show_progress=True):
    """Trains (or plants) the family's reference model and audits its biased decisions."""
    layout = ArtifactLayout(run_config.out_dir)
    family = run_config.family
    logger.info(f"🚀 train-ref: {family}")
    rule = build_teacher(run_config, family)
    gap_rng = np.random.default_rng(derive_seed(run_config.seed, f"teacher-gap-{family}"))
    extra = {"teacher": rule.to_dict(), "teacher_rates": monte_carlo_gap(rule, gap_rng, run_config.teacher.samples)}
    if run_config.planted:
        model = build_planted_model(family, rule, seed=run_config.seed_for("model")).model
    else:
        model, training = train_reference(run_config.model, run_config.train, make_task_spec(family), rule,
                                          run_config.seed_for("model"), show_progress=show_progress)
        save_weights(model, layout.model(family))
        write_json(layout.teacher(family), rule.to_dict())
        extra["training"] = training.to_dict()

    prompts = panel_prompts(_panel(run_config, run_config.n_profiles, run_config.seed_for("panel")))
    _, record = _method_record(run_config, model, prompts, baseline=None)
    row = method_row("Original", record, run_config.setting, run_config.setting, run_config.seed_for("panel"))
    return [_report(run_config, f"train_ref_{family}", "train-ref", [row], extra)]


def gen_data(run_config):
    """Writes the evaluation panel and the balanced counterfactual pairs of one setting."""
    layout = ArtifactLayout(run_config.out_dir)
    setting = run_config.setting
    logger.info(f"🚀 gen-data: {setting}")
    model, _ = load_model(run_config, layout, run_config.family)
    spec = make_task_spec(run_config.family)
    roster = load_roster()

    panel_seed = run_config.seed_for("panel")
    panel = _panel(run_config, run_config.n_profiles, panel_seed)
    dump_panel_jsonl(layout.panel(setting), panel, panel_seed)

    data_seed = run_config.seed_for("data")
    pairs = make_counterfactual_pairs(spec, roster, lambda prompts: decide_prompts(model, prompts),
                                      run_config.pairs_per_class, np.random.default_rng(data_seed),
                                      template=run_config.template)
    dump_pairs_jsonl(layout.pairs(setting), pairs, data_seed, roster=roster)
    logger.info(f"✅ gen-data: {len(panel)} panel profiles, {len(pairs)} pairs for {setting}")
    return []


def load_splits(run_config, layout, model, setting=None):
    setting = setting or run_config.setting
    pairs = load_pairs_jsonl(require_file(layout.pairs(setting), f"counterfactual pairs for {setting} (run gen-data)"))
    verify_pairs(model, pairs)
    split = run_config.split
    return split_pairs(pairs, split.train, split.dev, split.test,
                       rng=np.random.default_rng(run_config.seed_for("split")))


def _default_tap(run_config, layout, model):
    if run_config.tap is not None:
        return run_config.tap
    table = layout.sweep_table(run_config.setting)
    if table.is_file():
        return best_tap_from_table(table)
    tap = (model.config.layers, final_position(run_config.template))
    logger.warning(f"⚠️ No tap given and no sweep table; using the final token of the last layer {tap}")
    return tap


def train_das_stage(run_config, show_progress=True):
    """Trains one subspace at the configured tap and scores it against the baselines."""
    layout = ArtifactLayout(run_config.out_dir)
    setting = run_config.setting
    model, _ = load_model(run_config, layout, run_config.family)
    splits = load_splits(run_config, layout, model)
    tap = _default_tap(run_config, layout, model)
    logger.info(f"🚀 train-das: {setting} at tap {tap}")

    train_cache, dev_cache, test_cache = (TapCache.build(model, part)
                                          for part in (splits.train, splits.dev, splits.test))
    subspace, log = train_das(model, train_cache, dev_cache, tap, run_config.das_config(),
                              run_config.seed_for("das"), show_progress=show_progress)
    save_subspace(layout.subspace(setting, tap), subspace, run_id=f"{setting}-{run_config.seed}")
    write_jsonl(layout.das_log(setting, tap), log)

    rng = np.random.default_rng(run_config.seed_for("random-subspace"))
    extra = {
        "tap": list(tap),
        "k": subspace.k,
        "dev_iia": log[-1]["dev_iia"],
        "test_iia": iia_from_cache(model, subspace.basis, test_cache, tap),
        "baselines": baseline_iias(model, splits.test, tap, max(subspace.k, 1), rng, test_cache),
        "by_institution": iia_by_institution(model, subspace, splits.test, rng, test_cache),
        "split": {"requested": splits.requested, "obtained": splits.obtained},
    }
    logger.info(f"✅ train-das: test IIA {extra['test_iia']:.4f} (random {extra['baselines']['random']:.4f})")
    return [_report(run_config, f"train_das_{setting}", "train-das", extra=extra)]


def sweep_stage(run_config, num_workers=None):
    """Trains one subspace per (layer, position) and records the IIA grid."""
    layout = ArtifactLayout(run_config.out_dir)
    setting = run_config.setting
    model, _ = load_model(run_config, layout, run_config.family)
    splits = load_splits(run_config, layout, model)
    logger.info(f"🚀 sweep: {setting}")
    layers, positions = run_config.sweep_layers, run_config.sweep_positions
    if (layers and max(layers) > model.config.layers) or (positions and max(positions) >= model.config.context_length):
        raise UsageError("sweep grid outside the model", layers=str(layers), positions=str(positions),
                         model_layers=model.config.layers, context_length=model.config.context_length)

    kwargs = {} if num_workers is None else {"num_workers": num_workers}
    sweep = location_sweep(model, splits, run_config.das_config(),
                           seed_for=lambda layer, position: derive_seed(run_config.seed, f"sweep-{layer}-{position}"),
                           layers=layers, positions=positions, **kwargs)
    sweep.write_csv(layout.sweep_table(setting))
    log_rows = []
    for cell in sweep.cells:
        if cell.status != "ok":
            continue
        save_subspace(layout.subspace(setting, (cell.layer, cell.position)), cell.subspace,
                      run_id=f"{setting}-{run_config.seed}")
        log_rows.extend({"layer": cell.layer, "position": cell.position, **row} for row in cell.log)
    write_jsonl(layout.das_log(setting), log_rows)

    if sweep.best is None:
        raise DependencyError("every sweep cell failed; no tap to report", setting=setting)
    extra = {
        "layers": list(sweep.layers),
        "positions": list(sweep.positions),
        "dev_iia": _grid_json(sweep.grid("dev_iia")),
        "test_iia": _grid_json(sweep.grid("test_iia")),
        "best_tap": list(sweep.best_tap),
        "best_dev_iia": sweep.best.dev_iia,
        "best_test_iia": sweep.best.test_iia,
        "failed": [[c.layer, c.position, c.status] for c in sweep.cells if c.status != "ok"],
    }
    return [_report(run_config, f"sweep_{setting}", "sweep", extra=extra)]


def _grid_json(values):
    return [[None if np.isnan(v) else float(v) for v in row] for row in values]


def run_prompt_audit(run_config):
    """BiasScore, Outcome Δ and per-race rates for every fairness suffix on one shared panel."""
    layout = ArtifactLayout(run_config.out_dir)
    setting = run_config.setting
    model, _ = load_model(run_config, layout, run_config.family)
    panel_seed = run_config.seed_for("panel")
    logger.info(f"🚀 audit-prompts: {setting}")

    rows = []
    original = None
    for strategy, method in PROMPT_STRATEGIES:
        prompts = panel_prompts(_panel(run_config, run_config.n_profiles, panel_seed, suffix=strategy))
        table, record = _method_record(run_config, model, prompts, baseline=original, suffix=strategy)
        if original is None:
            original = table
        record["suffix"] = strategy
        rows.append(method_row(method, record, setting, setting, panel_seed))
        logger.info(f"🧪 {method}: bias {record['bias_score']:.2f}, Δ {record['outcome_delta']:+.2f}")
    return [_report(run_config, f"audit_prompts_{setting}", "audit-prompts", rows)]


def _trained_subspace(run_config, layout, setting, tap):
    path = require_file(layout.subspace(setting, tap), f"trained subspace for {setting} at tap {tap} (run train-das or sweep)")
    subspace, _ = load_subspace(path)
    return subspace


def _resolve_tap(run_config, layout, setting):
    if run_config.tap is not None:
        return run_config.tap
    return best_tap_from_table(layout.sweep_table(setting))


def debias_rows(run_config, model, subspace, source, target):
    """
    The five comparison rows on one shared panel of the run's setting.

    A k = 0 override swaps the learned subspace for the empty one.
    """
    d = model.config.width
    tap = subspace.tap
    if run_config.k == 0:
        subspace = empty_subspace(d, tap)
        random = Subspace(OrthonormalBasis.empty(d), tap, "random")
    else:
        random = random_subspace(d, subspace.k, run_config.seed_for("random-subspace"), tap=tap)
    interventions = {
        "Original": None,
        "Race Avg": InterventionSpec("RaceAverage", subspace, scope=run_config.scope),
        "Race Proj": InterventionSpec("RaceProject", subspace),
        "Full Avg": InterventionSpec("FullAverage", tap=tap, scope=run_config.scope),
        "Random Proj": InterventionSpec("RandomProject", random),
    }
    panel_seed = run_config.seed_for("panel")
    prompts = panel_prompts(_panel(run_config, run_config.n_profiles, panel_seed))
    rows = []
    original = None
    for method in DEBIAS_METHODS:
        table, record = _method_record(run_config, model, prompts, original, interventions[method])
        if original is None:
            original = table
        rows.append(method_row(method, record, source, target, panel_seed))
        logger.info(f"🧪 {method}: bias {record['bias_score']:.2f}, Δ {record['outcome_delta']:+.2f}")
    return rows


def run_debias(run_config):
    layout = ArtifactLayout(run_config.out_dir)
    setting = run_config.setting
    model, _ = load_model(run_config, layout, run_config.family)
    tap = _resolve_tap(run_config, layout, setting)
    subspace = _trained_subspace(run_config, layout, setting, tap)
    logger.info(f"🚀 debias: {setting} at tap {tap}, k={subspace.k}")
    rows = debias_rows(run_config, model, subspace, setting, setting)
    extra = {"tap": list(tap), "k": 0 if run_config.k == 0 else subspace.k}
    return [_report(run_config, f"debias_{setting}", "debias", rows, extra)]


def run_all(run_config, num_workers=None, show_progress=True):
    """
    The single-setting audit end to end: train-ref, gen-data, sweep (skipped when a tap
    is fixed), train-das at the chosen tap, audit-prompts and debias.
    """
    logger.info(f"🚀 run-all: {run_config.setting}, master seed {run_config.seed}")
    reports = train_ref(run_config, show_progress=show_progress)
    reports += gen_data(run_config)
    if run_config.tap is None:
        reports += sweep_stage(run_config, num_workers=num_workers)
    reports += train_das_stage(run_config, show_progress=show_progress)
    reports += run_prompt_audit(run_config)
    reports += run_debias(run_config)
    return reports


def transfers(reverse=False):
    pairs = list(TRANSFERS)
    if reverse:
        pairs += [(target, source) for source, target in TRANSFERS]
    return pairs


def _map_tap(tap, source_template, target_template):
    """A final-token tap follows the final token into the target template."""
    layer, position = tap
    if position == final_position(source_template):
        return layer, final_position(target_template)
    return layer, position


def run_generalization(run_config, settings=None):
    """
    Applies each source setting's subspace to a target setting: IIA on the target's
    test pairs plus the five-row debias table on the target panel.

    :raises TransferError: the settings' models have different widths.
    """
    layout = ArtifactLayout(run_config.out_dir)
    reports = []
    for source, target in settings or transfers(run_config.reverse):
        source_config, target_config = run_config.for_setting(source), run_config.for_setting(target)
        source_tap = _resolve_tap(run_config, layout, source)
        learned = _trained_subspace(run_config, layout, source, source_tap)
        model, _ = load_model(target_config, layout, target_config.family)
        if learned.d != model.config.width:
            raise TransferError("source subspace and target model differ in width",
                                source=source, target=target, d=learned.d, width=model.config.width)
        target_tap = _map_tap(source_tap, parse_setting(source)[1], parse_setting(target)[1])
        transferred = learned.at(target_tap)
        logger.info(f"🚀 generalize: {source} {source_tap} → {target} {target_tap}")

        splits = load_splits(target_config, layout, model, target)
        test_cache = TapCache.build(model, splits.test)
        extra = {
            "source": source,
            "target": target,
            "source_tap": list(source_tap),
            "target_tap": list(target_tap),
            "k": learned.k,
            "transfer_iia": iia_from_cache(model, transferred.basis, test_cache, target_tap),
            "target_best_iia": None,
        }
        if layout.sweep_table(target).is_file():
            own = _trained_subspace(run_config, layout, target, best_tap_from_table(layout.sweep_table(target)))
            extra["target_best_iia"] = iia_from_cache(model, own.basis, test_cache, own.tap)
            extra["target_best_tap"] = list(own.tap)
        rows = debias_rows(target_config, model, transferred, source, target)
        name = f"generalize_{source}__{target}"
        reports.append(AuditReport(name=name, kind="generalize", config=run_config.to_dict(),
                                   seeds=run_seeds(run_config), rows=rows, extra=extra))
    return reports

