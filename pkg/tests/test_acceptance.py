"""Acceptance criteria, one test per criterion.

Each test prints one ACCEPTANCE line so a plain pytest run shows a
pass/fail verdict per criterion. Statistical criteria pin their seeds; the
synthetic-world and model parameters used here are frozen test constants.
"""

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from http_stub import ChatStub
from parser_fixtures import CONFIDENCE_FIXTURES, LABEL_FIXTURES
from shillaudit.attacks import AttackConfig, run_attack
from shillaudit.audit import (
    OracleAuditor,
    audit_candidates,
    parse_confidence,
    parse_label_response,
    render_confidence_response,
    render_label_response,
)
from shillaudit.cli import main as cli_main
from shillaudit.dataset import LabeledUsers, compute_popularity, split_train_test
from shillaudit.errors import ResponseParseError
from shillaudit.metrics import detection_metrics, recommendation_consistency
from shillaudit.prescreen import (
    PrescreenConfig,
    pca_fit_project,
    pca_similarity_filter,
    run_prescreen,
    unpopular_ratio_filter,
)
from shillaudit.recsys import (
    PopularityRecommender,
    RecModelConfig,
    rank_metrics,
    target_exposure,
    train_recommender,
)
from shillaudit.reward import (
    CorpusDataset,
    RewardConfig,
    build_rft_corpus,
    composite_reward,
    group_advantages,
    score_task,
)
from shillaudit.synthetic import block_interactions, synthetic_catalog, synthetic_interactions

pytestmark = pytest.mark.acceptance

# Frozen Stage-I world: 1000 genuine users, long-tailed catalog, profile
# length comparable to the catalog's popular head so both injectors leave a
# projectable signature. Only delta/tau are pinned by the criteria; the
# component count is a test constant (the 3-component config default cannot
# meet the FAR bound for 1000 users at delta=0.9, see notes in the repo
# README about choosing d).
STAGE1_SEEDS = (0, 1, 2, 3, 4)
STAGE1_WORLD = dict(n_users=1000, n_items=900, mean_profile_len=180.0, popularity_exponent=1.3)
STAGE1_PRESCREEN = PrescreenConfig(delta=0.9, tau=0.6, components=10, percentile_cutoff=0.2)


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    print(f"ACCEPTANCE {name}: PASS")


# -- shared Stage-I pipeline runs -------------------------------------------------


@pytest.fixture(scope="module")
def stage1_runs():
    t0 = time.perf_counter()
    runs = []
    for seed in STAGE1_SEEDS:
        clean = synthetic_interactions(
            STAGE1_WORLD["n_users"],
            STAGE1_WORLD["n_items"],
            mean_profile_len=STAGE1_WORLD["mean_profile_len"],
            seed=seed,
            popularity_exponent=STAGE1_WORLD["popularity_exponent"],
        )
        for strategy in ("random", "bandwagon"):
            poisoned = run_attack(clean, AttackConfig(strategy=strategy, seed=seed + 100))
            candidates = run_prescreen(poisoned.matrix, STAGE1_PRESCREEN)
            runs.append({"seed": seed, "strategy": strategy, "poisoned": poisoned, "candidates": candidates})
    elapsed = time.perf_counter() - t0
    return {"runs": runs, "elapsed": elapsed}


# -- criterion 1: metric oracle equivalence ---------------------------------------


def brute_force_detection(flagged, labels):
    tp = fp = fn = tn = 0
    for u in range(labels.n_users):
        fake, hit = labels.is_fake(u), u in flagged
        tp += fake and hit
        fn += fake and not hit
        fp += (not fake) and hit
        tn += (not fake) and not hit
    dr = 100.0 * tp / (tp + fn) if (tp + fn) else None
    far = 100.0 * fp / (fp + tn) if (fp + tn) else 0.0
    return tp, fp, fn, tn, dr, far


def brute_force_ranking(model, test, n):
    hr_sum = ndcg_sum = 0.0
    pairs = 0
    csr = test.csr()
    for user in range(test.n_users):
        items = csr.indices[csr.indptr[user] : csr.indptr[user + 1]]
        if items.size == 0:
            continue
        scores = model.score_items(user).copy()
        train = set(model.train_items(user).tolist())
        order = sorted(
            (i for i in range(model.n_items) if i not in train),
            key=lambda i: (-scores[i], i),
        )
        rank_of = {item: pos + 1 for pos, item in enumerate(order)}
        for item in items:
            pairs += 1
            rank = rank_of.get(int(item))
            if rank is not None and rank <= n:
                hr_sum += 1.0
                ndcg_sum += 1.0 / math.log2(rank + 1)
    return 100.0 * hr_sum / pairs, 100.0 * ndcg_sum / pairs, pairs


def test_c01_metric_oracle_equivalence():
    from conftest import random_matrix
    from test_recsys import fixed_model

    with criterion("C1 metric-oracle-equivalence"):
        t0 = time.perf_counter()
        for case in range(100):
            rng = np.random.default_rng(1000 + case)
            n_users = int(rng.integers(5, 51))
            n_items = int(rng.integers(10, 101))

            # detection metrics against confusion counting
            fakes = [int(u) for u in rng.choice(n_users, size=int(rng.integers(0, n_users // 2 + 1)), replace=False)]
            labels = LabeledUsers(n_users, fakes)
            flagged = {int(u) for u in rng.choice(n_users, size=int(rng.integers(0, n_users)), replace=False)}
            rep = detection_metrics(flagged, labels)
            tp, fp, fn, tn, dr, far = brute_force_detection(flagged, labels)
            assert (rep.true_positives, rep.false_positives, rep.false_negatives, rep.true_negatives) == (tp, fp, fn, tn)
            if dr is None:
                assert rep.dr is None
            else:
                assert abs(rep.dr - dr) <= 1e-12
            assert abs(rep.far - far) <= 1e-12

            # ranking metrics against a full-sort oracle; the matrix may
            # realize fewer distinct items than requested, so build the
            # model in its actual item space
            matrix = random_matrix(rng, n_users, n_items, density=0.2)
            split = split_train_test(matrix, "leave-one-out", seed=case)
            if split.test.nnz == 0:
                continue
            model = fixed_model(
                rng.normal(size=(matrix.n_users, 4)),
                rng.normal(size=(matrix.n_items, 4)),
                [split.train.user_items(u).tolist() for u in range(matrix.n_users)],
            )
            n_at = int(rng.integers(1, 15))
            got = rank_metrics(model, split.test, n_at)
            hr, ndcg, pairs = brute_force_ranking(model, split.test, n_at)
            assert got.n_pairs == pairs
            assert abs(got.hr - hr) <= 1e-12
            assert abs(got.ndcg - ndcg) <= 1e-12
        elapsed = time.perf_counter() - t0
        assert elapsed < 10.0, f"metric oracle suite took {elapsed:.1f}s"


# -- criterion 2: filter equivalence and monotonicity ------------------------------


def test_c02_filter_oracles_and_monotonicity():
    from conftest import random_matrix
    from test_prescreen import brute_force_pca_flags, brute_force_unpop_flags

    with criterion("C2 filter-oracles"):
        for case in range(50):
            rng = np.random.default_rng(2000 + case)
            matrix = random_matrix(rng, int(rng.integers(8, 30)), int(rng.integers(6, 25)))
            d = int(rng.integers(1, 6))
            proj = pca_fit_project(matrix, d)
            deltas = sorted(float(x) for x in rng.uniform(0.0, 1.0, size=4))
            pca_sizes = []
            for delta in deltas:
                flagged, _ = pca_similarity_filter(proj, delta)
                assert flagged == brute_force_pca_flags(proj.projected, delta)
                pca_sizes.append(len(flagged))
            assert pca_sizes == sorted(pca_sizes, reverse=True), "raising delta must not grow S_PCA"

            pop = compute_popularity(matrix, 0.3)
            taus = sorted(float(x) for x in rng.uniform(0.0, 1.0, size=4))
            unpop_sizes = []
            for tau in taus:
                flagged, _ = unpopular_ratio_filter(matrix, pop.unpopular_set, tau)
                assert flagged == brute_force_unpop_flags(matrix, pop.unpopular_set, tau)
                unpop_sizes.append(len(flagged))
            assert unpop_sizes == sorted(unpop_sizes, reverse=True), "raising tau must not grow S_UNPOP"


# -- criteria 3 and 4: Stage-I effectiveness and oracle pipeline -------------------


def test_c03_stage1_effectiveness(stage1_runs):
    with criterion("C3 stage1-effectiveness"):
        by_strategy = {"random": {"recall": [], "far": []}, "bandwagon": {"recall": [], "far": []}}
        for run in stage1_runs["runs"]:
            labels = run["poisoned"].labels
            s = set(run["candidates"].users)
            fakes = set(labels.fake_indices())
            genuine = set(labels.genuine_indices())
            by_strategy[run["strategy"]]["recall"].append(len(s & fakes) / len(fakes))
            by_strategy[run["strategy"]]["far"].append(len(s & genuine) / len(genuine))
        for strategy, vals in by_strategy.items():
            recall = float(np.mean(vals["recall"]))
            far = float(np.mean(vals["far"]))
            print(f"  stage1 {strategy}: recall={recall:.3f} far={far:.3f} over {len(vals['recall'])} seeds")
            assert recall >= 0.95, f"{strategy} Stage-I recall {recall:.3f} < 0.95"
            assert far <= 0.25, f"{strategy} Stage-I FAR {far:.3f} > 0.25"
        assert stage1_runs["elapsed"] < 120.0, f"Stage-I runs took {stage1_runs['elapsed']:.0f}s"


def test_c04_end_to_end_oracle_pipeline(stage1_runs):
    with criterion("C4 oracle-pipeline"):
        catalog = synthetic_catalog(STAGE1_WORLD["n_items"], seed=0)
        for run in stage1_runs["runs"]:
            poisoned = run["poisoned"]
            candidates = run["candidates"]
            outcome = audit_candidates(
                OracleAuditor(poisoned.labels, "confidence"),
                candidates,
                poisoned.matrix,
                catalog,
                "confidence",
                "Genuine users follow consistent tastes.",
            )
            report = detection_metrics(set(outcome.flagged), poisoned.labels, candidates=set(candidates.users))
            assert report.dr == report.stage1_recall, "oracle DR must equal Stage-I recall exactly"
            assert report.far == 0.0, "oracle FAR must be exactly zero"


# -- criterion 5: reward suite ------------------------------------------------------


def test_c05_reward_suite():
    with criterion("C5 reward-suite"):
        cfg = RewardConfig()
        real_out = render_label_response("1. a 2. b", "Real")
        fake_out = render_label_response("1. a 2. b", "Fake")
        unparseable = "no template here"
        # exhaustive task-reward cases over (prediction, truth, unparseable)
        expectations = {
            (real_out, "Real"): cfg.r1,
            (fake_out, "Fake"): cfg.r1,
            (fake_out, "Real"): -cfg.r1,
            (real_out, "Fake"): -cfg.r2,
            (unparseable, "Real"): -cfg.r1,
            (unparseable, "Fake"): -cfg.r2,
        }
        for (out, truth), expected in expectations.items():
            assert score_task(out, truth, cfg) == expected

        # additivity is bit-exact for every combination
        for out in (real_out, fake_out, unparseable, fake_out + " trailing"):
            for truth in ("Real", "Fake"):
                bd = composite_reward(out, truth, cfg)
                assert bd.composite == bd.r_format + bd.r_clarity + bd.r_consist + bd.r_task

        assert group_advantages([1.0, 2.0, 3.0]) == [-1.0, 0.0, 1.0]

        rng = np.random.default_rng(5)
        for _ in range(1000):
            size = int(rng.integers(2, 12))
            rewards = rng.uniform(-10, 10, size=size).tolist()
            shift = float(rng.uniform(-5, 5))
            base = group_advantages(rewards)
            shifted = group_advantages([r + shift for r in rewards])
            assert max(abs(a - b) for a, b in zip(base, shifted)) < 1e-9
            assert abs(sum(base)) < 1e-9


# -- criterion 6: parser corpus ------------------------------------------------------


def test_c06_parser_fixture_corpus():
    with criterion("C6 parser-corpus"):
        assert len(LABEL_FIXTURES) + len(CONFIDENCE_FIXTURES) >= 40
        for name, raw, expected in LABEL_FIXTURES:
            if expected == "fail":
                with pytest.raises(ResponseParseError):
                    parse_label_response(raw)
            else:
                assert parse_label_response(raw) == expected, name
        for name, raw, expected in CONFIDENCE_FIXTURES:
            if expected == "fail":
                with pytest.raises(ResponseParseError):
                    parse_confidence(raw)
            else:
                assert parse_confidence(raw) == expected, name


# -- criterion 7: RC arithmetic -------------------------------------------------------


def test_c07_rc_table_arithmetic():
    # The third pair is stated as (2.468, 2.573) -> 95.93%, but
    # 100 * 2.468 / 2.573 = 95.9191...%, which rounds to 95.92 under any
    # half-up/half-even/truncation mode. The function is implemented
    # faithfully and this check is expected to fail on that pair; the README
    # carries the analysis.
    with criterion("C7 rc-arithmetic"):
        assert recommendation_consistency(34.337, 34.654) == 99.09
        assert recommendation_consistency(25.093, 25.358) == 98.95
        assert recommendation_consistency(2.468, 2.573) == 95.93


# -- criterion 8: recommender sanity ---------------------------------------------------


def test_c08_recommender_sanity():
    with criterion("C8 recommender-sanity"):
        trained_hr, baseline_hr = [], []
        for seed in (0, 1, 2):
            matrix = block_interactions(
                200, 200, n_blocks=4, in_block_prob=0.9, mean_profile_len=20.0, seed=seed
            )
            split = split_train_test(matrix, "leave-one-out", seed=seed)
            cfg = RecModelConfig(embedding_dim=32, n_layers=2, n_epochs=30, seed=seed)
            model = train_recommender(split.train, cfg)
            trained_hr.append(rank_metrics(model, split.test, 10).hr)
            baseline_hr.append(rank_metrics(PopularityRecommender(split.train), split.test, 10).hr)
        lift = float(np.mean(trained_hr)) / float(np.mean(baseline_hr))
        print(f"  block HR@10: trained={np.mean(trained_hr):.2f} baseline={np.mean(baseline_hr):.2f} lift={lift:.2f}x")
        assert lift >= 1.2, f"trained/baseline HR lift {lift:.2f} < 1.2"

        wins = 0
        for seed in (0, 1, 2, 3, 4):
            clean = synthetic_interactions(300, 250, mean_profile_len=25.0, seed=seed)
            pop = compute_popularity(clean, 0.2)
            from shillaudit.attacks import select_targets

            targets = select_targets(pop, "unpopular", 5, seed)
            poisoned = run_attack(
                clean,
                AttackConfig(strategy="random", fake_fraction=0.1, seed=seed),
                targets=targets,
            )
            cfg = RecModelConfig(embedding_dim=16, n_layers=0, n_epochs=20, seed=seed)
            exposure_clean = target_exposure(train_recommender(clean, cfg), targets, 50, range(clean.n_users))
            exposure_poisoned = target_exposure(
                train_recommender(poisoned.matrix, cfg), targets, 50, range(clean.n_users)
            )
            wins += exposure_poisoned > exposure_clean
        print(f"  exposure lift: {wins}/5 paired seeds")
        assert wins >= 4, f"exposure increased in only {wins}/5 paired runs"


# -- criterion 9: corpus builder --------------------------------------------------------


def test_c09_corpus_builder_scaling():
    with criterion("C9 corpus-builder"):
        datasets = []
        for k in range(3):
            matrix = synthetic_interactions(150, 80, mean_profile_len=12.0, seed=40 + k)
            datasets.append(
                CorpusDataset(
                    name=f"synth{k}",
                    train=matrix,
                    catalog=synthetic_catalog(80, seed=40 + k),
                    knowledge="Genuine users follow consistent tastes.",
                )
            )
        records = build_rft_corpus(
            datasets,
            injectors=["random", "bandwagon"],
            regimes=["unpopular", "popular", "random"],
            seed=9,
            attack_base=AttackConfig(fake_fraction=0.02, n_targets=2),
        )
        groups = {(r.provenance["dataset"], r.provenance["strategy"], r.provenance["regime"]) for r in records}
        assert len(groups) == 18, f"expected 18 malicious groups, got {len(groups)}"
        n_fake = sum(1 for r in records if r.ground_truth == "Fake")
        n_real = len(records) - n_fake
        assert n_fake == n_real, f"corpus unbalanced: {n_fake} Fake vs {n_real} Real"
        for group in groups:
            cell = [r for r in records if (r.provenance["dataset"], r.provenance["strategy"], r.provenance["regime"]) == group]
            assert sum(1 for r in cell if r.ground_truth == "Fake") == len(cell) // 2


# -- criterion 10: transport robustness ---------------------------------------------------


def test_c10_transport_robustness(tmp_path):
    with criterion("C10 transport-robustness"):
        data_dir = tmp_path / "data"
        data_dir.mkdir()
        matrix = synthetic_interactions(100, 60, mean_profile_len=10.0, seed=3)
        matrix.save_csv(data_dir / "interactions.csv")
        synthetic_catalog(60, seed=3).save_jsonl(data_dir / "catalog.jsonl")
        out_dir = tmp_path / "out"
        config = tmp_path / "run.toml"
        config.write_text(
            f"""
output_dir = "{out_dir}"
[dataset]
interactions = "{data_dir / 'interactions.csv'}"
catalog = "{data_dir / 'catalog.jsonl'}"
[attack]
fake_fraction = 0.05
n_targets = 2
seed = 5
[prescreen]
components = 4
[audit]
mode = "confidence"
retries = 0
max_concurrency = 1
timeout = 0.4
"""
        )
        assert cli_main(["attack", "--config", str(config)]) == 0
        with ChatStub(response_text=render_confidence_response("x", 5), delay_seconds=1.5) as stub:
            url_args = ["--set", f"audit.base_url={stub.url}", "--set", "audit.model_name=m"]
            assert cli_main(["detect", "--config", str(config)] + url_args) == 0
            clean_far = json.loads((out_dir / "detection_report.json").read_text())["far_raw"]

            stub.script("drop", "delay", "malformed", "drop", "delay", "malformed")
            assert cli_main(["detect", "--config", str(config)] + url_args) == 0, "cmd_detect crashed under faults"
            faulty = json.loads((out_dir / "detection_report.json").read_text())
        assert faulty["far_raw"] == clean_far, "fail-open FAR changed under transport failures"
