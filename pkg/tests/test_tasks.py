import os
import tempfile
import unittest
from collections import Counter

import numpy as np
from scipy import stats

import config
from errors import ContextLengthError, ContractViolation, DatasetIntegrityError, SaturationError
from tasks import (
    BEHAVIOR_CLASSES,
    NameRoster,
    Profile,
    append_fairness_suffix,
    behavior_class,
    decode,
    dump_pairs_jsonl,
    gpa_bucket,
    load_institutions,
    load_pairs_jsonl,
    load_roster,
    make_counterfactual_pairs,
    make_eval_panel,
    make_task_spec,
    make_training_set,
    panel_prompts,
    race_variants,
    render_prompt,
    sample_profile,
    split_pairs,
    token_name,
)

RACE_BONUS = {"asian": 1, "black": -3, "latino": -1, "white": 3}


def _race_of_identity(token):
    if token >= config.NAME_BASE:
        return config.RACES[(token - config.NAME_BASE) // config.NAMES_PER_RACE]
    return config.RACES[token - config.RACE_TOKEN_BASE]


def toy_oracle(prompts):
    """Yes iff GPA bucket + race bonus ≥ 15: a name-sensitive stand-in for a trained model."""
    labels = []
    for prompt in prompts:
        gpa_token = next(t for t in prompt.tokens if config.GPA_BASE <= t < config.EC_BASE)
        race = _race_of_identity(prompt.tokens[prompt.name_position])
        labels.append("Yes" if gpa_token - config.GPA_BASE + RACE_BONUS[race] >= 15 else "No")
    return labels


def name_blind_oracle(prompts):
    return ["Yes" if p.tokens[4] % 2 else "No" for p in prompts]


class StubRule:
    def label(self, profile):
        return "Yes" if profile.qualifications[1] >= 4 else "No"


class TestRoster(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.roster = load_roster()

    def test_four_races_of_one_hundred_disjoint_names(self):
        self.assertEqual(tuple(self.roster.names), config.RACES)
        all_names = [n for names in self.roster.names.values() for n in names]
        self.assertEqual(len(all_names), 400)
        self.assertEqual(len(set(all_names)), 400)

    def test_name_ids_follow_roster_race_order(self):
        self.assertEqual(self.roster.name_of(0), self.roster.names["asian"][0])
        self.assertEqual(self.roster.name_of(399), self.roster.names["white"][99])
        self.assertEqual(list(self.roster.name_ids("black"))[:2], [100, 101])

    def test_name_under_two_races_is_rejected(self):
        names = {race: list(self.roster.names[race]) for race in config.RACES}
        names["white"][0] = names["black"][0]
        with self.assertRaises(DatasetIntegrityError):
            NameRoster(names)

    def test_short_roster_is_rejected(self):
        names = {race: list(self.roster.names[race]) for race in config.RACES}
        names["latino"] = names["latino"][:99]
        with self.assertRaises(DatasetIntegrityError):
            NameRoster(names)

    def test_institution_lists(self):
        self.assertEqual(len(load_institutions("admissions")), 20)
        self.assertEqual(len(load_institutions("hiring")), 40)
        self.assertEqual(load_institutions("admissions")[0], "Harvard University")


class TestSampling(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.admissions = make_task_spec("admissions")
        cls.hiring = make_task_spec("hiring")
        cls.roster = load_roster()

    def test_observed_qualifications_use_the_gpa_grid(self):
        self.assertEqual(self.admissions.observed((3.04, 4, 2)), (3.0, 4, 2))
        self.assertEqual(self.admissions.observed((1.96, 0, 3)), (2.0, 0, 3))
        self.assertEqual(self.hiring.observed((12, 2, 1)), (12, 2, 1))

    def test_profiles_stay_in_their_domains(self):
        rng = np.random.default_rng(0)
        for _ in range(2000):
            gpa, ecs, letters = sample_profile(self.admissions, rng).qualifications
            self.assertTrue(1.0 <= gpa <= 4.0)
            self.assertEqual(gpa, round(gpa, 2))
            self.assertIn(ecs, range(9))
            self.assertIn(letters, range(4))
            experience, degree, referrals = sample_profile(self.hiring, rng).qualifications
            self.assertIn(experience, range(21))
            self.assertIn(degree, range(4))
            self.assertIn(referrals, range(4))

    def test_same_seed_same_profile(self):
        a = sample_profile(self.admissions, np.random.default_rng(42))
        b = sample_profile(self.admissions, np.random.default_rng(42))
        self.assertEqual(a, b)

    def test_discrete_variables_pass_chi_square(self):
        rng = np.random.default_rng(11)
        profiles = [sample_profile(self.admissions, rng) for _ in range(10_000)]
        for column, extent in ((1, 9), (2, 4)):
            counts = Counter(p.qualifications[column] for p in profiles)
            observed = [counts[v] for v in range(extent)]
            self.assertGreater(stats.chisquare(observed).pvalue, 0.001)
        races = Counter(p.race for p in profiles)
        self.assertGreater(stats.chisquare([races[r] for r in config.RACES]).pvalue, 0.001)

    def test_race_variants_share_qualifications(self):
        rng = np.random.default_rng(3)
        profile = sample_profile(self.admissions, rng)
        variants = race_variants(profile, self.roster, rng)
        self.assertEqual([v.race for v in variants], list(config.RACES))
        self.assertTrue(all(v.qualifications == profile.qualifications for v in variants))
        self.assertTrue(all(v.institution == profile.institution for v in variants))

    def test_own_race_variant_is_the_profile(self):
        white = Profile("admissions", 0, (3.0, 2, 1), 350, "white")
        variants = race_variants(white, self.roster, np.random.default_rng(0))
        self.assertEqual(variants[3], white)

    def test_implicit_profile_race_follows_name(self):
        with self.assertRaises(ContractViolation):
            Profile("admissions", 0, (3.0, 2, 1), 17, "white")


class TestEncoding(unittest.TestCase):
    def setUp(self):
        self.profile = Profile("admissions", 3, (3.40, 5, 2), 17, "asian")

    def test_free_text_layout(self):
        prompt = render_prompt(self.profile, "free")
        self.assertEqual(decode(prompt.tokens[:8]),
                         ["BOS", "TPL_A", "UNI_3", "NAME_17", "GPA_B24", "EC_5", "LET_2", "ASK"])
        self.assertEqual(prompt.tokens[8:], (config.PAD,) * 8)
        self.assertEqual((prompt.name_position, prompt.final_position), (3, 7))

    def test_list_template_permutes_content(self):
        free = render_prompt(self.profile, "free")
        listed = render_prompt(self.profile, "list")
        self.assertEqual(listed.tokens[1], config.TPL_B)
        self.assertEqual(Counter(free.tokens[2:8]), Counter(listed.tokens[2:8]))
        self.assertNotEqual(free.tokens, listed.tokens)
        self.assertEqual(listed.name_position, 6)

    def test_explicit_template_carries_race_token(self):
        explicit = Profile("admissions", 3, (3.40, 5, 2), 17, "white", explicit=True)
        prompt = render_prompt(explicit, "explicit")
        self.assertEqual(token_name(prompt.tokens[3]), "RACE_WHITE")
        self.assertEqual(prompt.tokens[1], config.TPL_EXPL)

    def test_template_mode_mismatch_is_rejected(self):
        with self.assertRaises(ContractViolation):
            render_prompt(self.profile, "explicit")
        with self.assertRaises(ContractViolation):
            render_prompt(self.profile.as_explicit(), "free")

    def test_hiring_tokens(self):
        prompt = render_prompt(Profile("hiring", 39, (20, 3, 0), 120, "black"), "list")
        self.assertEqual(decode(prompt.tokens[:8]),
                         ["BOS", "TPL_B", "ROLE_39", "EXP_20", "DEG_3", "REF_0", "NAME_120", "ASK"])

    def test_gpa_buckets(self):
        self.assertEqual(gpa_bucket(1.0), 0)
        self.assertEqual(gpa_bucket(3.40), 24)
        self.assertEqual(gpa_bucket(1.05), 1)
        self.assertEqual(gpa_bucket(4.0), 30)

    def test_token_name_rejects_out_of_vocabulary(self):
        with self.assertRaises(ContractViolation):
            token_name(config.VOCAB_SIZE)


class TestFairnessSuffix(unittest.TestCase):
    def setUp(self):
        self.prompt = render_prompt(Profile("admissions", 0, (2.5, 1, 1), 250, "latino"), "free")

    def test_none_is_identity(self):
        self.assertEqual(append_fairness_suffix(self.prompt, "none"), self.prompt)

    def test_very_repeats_k_times(self):
        for k in (1, 2, 4):
            out = append_fairness_suffix(self.prompt, f"very{k}")
            self.assertEqual(out.tokens.count(config.VERY), k)
            self.assertEqual(out.tokens[7], config.VERYHDR)
            self.assertEqual(out.final_position, 7 + k + 1)

    def test_simple_keeps_length_and_moves_ask(self):
        out = append_fairness_suffix(self.prompt, "simple")
        self.assertEqual(out.length, self.prompt.length)
        self.assertEqual(out.tokens[7:9], (config.SIMPLE, config.ASK))
        self.assertEqual(out.name_position, self.prompt.name_position)

    def test_overflow_raises_context_length_error(self):
        with self.assertRaises(ContextLengthError):
            append_fairness_suffix(self.prompt, "very8")

    def test_unknown_strategy_is_rejected(self):
        with self.assertRaises(ContractViolation):
            append_fairness_suffix(self.prompt, "polite")


class TestPanels(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.spec = make_task_spec("admissions")
        cls.roster = load_roster()

    def test_four_prompts_per_profile(self):
        panel = make_eval_panel(self.spec, self.roster, 400, "free", seed=7)
        self.assertEqual(len(panel_prompts(panel)), 1600)

    def test_races_balanced_exactly(self):
        panel = make_eval_panel(self.spec, self.roster, 100, "list", seed=7)
        races = Counter(p.race for row in panel for p in row.profiles)
        self.assertEqual(set(races.values()), {100})

    def test_regeneration_is_identical_and_thread_count_free(self):
        a = make_eval_panel(self.spec, self.roster, 50, "free", seed=9, num_workers=1)
        b = make_eval_panel(self.spec, self.roster, 50, "free", seed=9, num_workers=4)
        self.assertEqual(a, b)

    def test_explicit_panel_uses_race_tokens(self):
        panel = make_eval_panel(self.spec, self.roster, 5, "explicit", seed=1)
        for row in panel:
            self.assertEqual([p.tokens[3] for p in row.prompts], [6, 7, 8, 9])

    def test_training_set_follows_template_mix(self):
        data = make_training_set(self.spec, StubRule(), 600, {"free": 0.5, "explicit": 0.5},
                                 np.random.default_rng(0))
        templates = Counter(p.template for p in data.prompts)
        self.assertEqual(set(templates), {"free", "explicit"})
        expected = [1 if p.qualifications[1] >= 4 else 0 for p in data.profiles]
        self.assertEqual(data.labels.tolist(), expected)


class TestCounterfactualPairs(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.spec = make_task_spec("admissions")
        cls.roster = load_roster()
        cls.pairs = make_counterfactual_pairs(cls.spec, cls.roster, toy_oracle, 5, np.random.default_rng(8))

    def test_counts_per_class_and_institution(self):
        self.assertEqual(len(self.pairs), 400)
        self.assertEqual(Counter(p.behavior_class for p in self.pairs), {c: 100 for c in BEHAVIOR_CLASSES})
        per_institution = Counter((p.institution, p.behavior_class) for p in self.pairs)
        self.assertEqual(set(per_institution.values()), {5})

    def test_labels_are_consistent(self):
        for pair in self.pairs:
            self.assertEqual(behavior_class(pair.base_label, pair.counterfactual_label), pair.behavior_class)
            self.assertEqual(toy_oracle([pair.target])[0], pair.base_label)
            self.assertEqual(toy_oracle([pair.swapped_prompt()])[0], pair.counterfactual_label)

    def test_unfillable_class_saturates(self):
        with self.assertRaises(SaturationError) as ctx:
            make_counterfactual_pairs(self.spec, self.roster, name_blind_oracle, 1,
                                      np.random.default_rng(0), attempt_budget=50)
        self.assertEqual(ctx.exception.context["institution"], "Harvard University")

    def test_split_bookkeeping(self):
        splits = split_pairs(self.pairs, train=200, dev=100, test=50, rng=np.random.default_rng(0))
        self.assertEqual((len(splits.train), len(splits.dev), len(splits.test)), (200, 100, 50))
        short = split_pairs(self.pairs, rng=np.random.default_rng(0))
        self.assertEqual(sum(short.obtained.values()), 400)
        self.assertEqual(short.requested, {"train": 2000, "dev": 1024, "test": 900})

    def test_jsonl_dump_and_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "pairs.jsonl")
            dump_pairs_jsonl(path, self.pairs[:20], seed=8, roster=self.roster)
            self.assertEqual(load_pairs_jsonl(path), self.pairs[:20])


if __name__ == "__main__":
    unittest.main()
