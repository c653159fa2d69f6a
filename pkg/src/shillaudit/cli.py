"""Command-line pipeline orchestration.

Subcommands: attack, detect, sweep, evaluate-rc, build-corpus, report.
Every command reads a TOML config (overridable with --set section.key=value),
writes its outputs plus a resolved config snapshot into the output
directory, and exits 0 on success, 2 on config/data errors, 3 on transport
failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import attacks as attacks_mod
from . import metrics as metrics_mod
from . import prescreen as prescreen_mod
from . import recsys as recsys_mod
from . import reward as reward_mod
from .audit import (
    AlwaysGenuineAuditor,
    HttpAuditor,
    OracleAuditor,
    ScriptedAuditor,
    audit_candidates,
    check_endpoint_reachable,
    load_prior_knowledge,
    write_verdict_log,
)
from .config import RunConfig, load_run_config
from .dataset import (
    InteractionMatrix,
    load_interactions,
    load_item_catalog,
    split_train_test,
)
from .errors import ConfigError, DatasetError, ShillAuditError, TransportError

POISONED_CSV = "poisoned_interactions.csv"
MANIFEST_JSON = "attack_manifest.json"
CANDIDATES_JSON = "candidate_set.json"
VERDICTS_JSONL = "verdict_log.jsonl"
DETECTION_JSON = "detection_report.json"
SPLIT_REPORT_JSON = "split_report.json"
SWEEP_CSV = "sweep.csv"
RC_JSON = "rc_report.json"
CORPUS_JSONL = "rft_corpus.jsonl"
COMBINED_JSON = "combined_report.json"


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare(args) -> tuple[RunConfig, Path]:
    cfg = load_run_config(args.config, overrides=args.set or [])
    if getattr(args, "output_dir", None):
        cfg = replace(cfg, output_dir=args.output_dir)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return cfg, out_dir


def _knowledge_text(cfg: RunConfig) -> str:
    source = cfg.audit.prior_knowledge or cfg.dataset.domain
    return load_prior_knowledge(source)


# -- attack --------------------------------------------------------------------


def cmd_attack(args) -> int:
    cfg, out_dir = _prepare(args)
    cfg.require_files(cfg.dataset.interactions)
    matrix = load_interactions(cfg.dataset.interactions, format=cfg.dataset.format)
    poisoned = attacks_mod.run_attack(
        matrix, cfg.attack, percentile_cutoff=cfg.prescreen.percentile_cutoff
    )
    poisoned.matrix.save_csv(out_dir / POISONED_CSV)
    poisoned.save_manifest(out_dir / MANIFEST_JSON)
    cfg.save_snapshot(out_dir / "config_snapshot.json")
    n_fake = poisoned.labels.n_fake
    print(
        f"attack={cfg.attack.strategy} fake_users={n_fake} "
        f"quota={poisoned.attack_meta['quota']} targets={len(poisoned.targets)} "
        f"-> {out_dir / POISONED_CSV}"
    )
    return 0


# -- detect --------------------------------------------------------------------


def _build_auditor(args, cfg: RunConfig, matrix, labels):
    if args.skip_audit:
        return None
    mock = getattr(args, "mock_auditor", None)
    if mock == "oracle":
        return OracleAuditor(labels, cfg.audit.mode)
    if mock == "always-genuine":
        return AlwaysGenuineAuditor(cfg.audit.mode)
    if mock == "scripted":
        if not args.scripted_responses:
            raise ConfigError("--scripted-responses is required with --mock-auditor scripted")
        return ScriptedAuditor.from_jsonl(args.scripted_responses, matrix)
    if mock:
        raise ConfigError(f"unknown mock auditor {mock!r}")
    endpoint = cfg.audit.endpoint()
    check_endpoint_reachable(endpoint)
    return HttpAuditor(endpoint)


def cmd_detect(args) -> int:
    cfg, out_dir = _prepare(args)
    poisoned_path = args.poisoned or str(out_dir / POISONED_CSV)
    manifest_path = args.manifest or str(out_dir / MANIFEST_JSON)
    cfg.require_files(poisoned_path, manifest_path, cfg.dataset.catalog)

    matrix = load_interactions(poisoned_path, format="csv")
    catalog = load_item_catalog(cfg.dataset.catalog)
    catalog.validate_against(matrix)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    labels = attacks_mod.labels_from_manifest(manifest, matrix)

    # The auditor (and endpoint reachability) is resolved before the
    # prescreen work starts, so a dead endpoint fails fast.
    auditor = _build_auditor(args, cfg, matrix, labels)

    candidates = prescreen_mod.run_prescreen(matrix, cfg.prescreen)
    _write_json(out_dir / CANDIDATES_JSON, candidates.to_rows(matrix))

    if auditor is None:
        flagged = set(candidates.users)
        report = metrics_mod.detection_metrics(flagged, labels, candidates=set(candidates.users))
        stage = "stage1-only"
    else:
        outcome = audit_candidates(
            auditor,
            candidates,
            matrix,
            catalog,
            mode=cfg.audit.mode,
            knowledge=_knowledge_text(cfg),
            fail_closed=cfg.audit.fail_closed,
            item_char_budget=cfg.audit.item_char_budget,
            max_items=cfg.audit.max_items,
        )
        write_verdict_log(outcome, matrix, out_dir / VERDICTS_JSONL)
        flagged = set(outcome.flagged)
        report = metrics_mod.detection_metrics(flagged, labels, candidates=set(candidates.users))
        stage = "two-stage"

    payload = report.to_dict()
    payload.update(
        {
            "pipeline": stage,
            "n_candidates": len(candidates.users),
            "flagged_user_ids": sorted(matrix.user_ids[u] for u in flagged),
            "attack_manifest": manifest_path,
        }
    )
    _write_json(out_dir / DETECTION_JSON, payload)
    cfg.save_snapshot(out_dir / "config_snapshot.json")
    print(
        f"pipeline={stage} candidates={len(candidates.users)} "
        f"DR={payload['dr']} FAR={payload['far']}"
    )
    return 0


# -- sweep ---------------------------------------------------------------------


def _parse_grid(text: str | None, fallback: tuple[float, ...]) -> list[float]:
    if text:
        return [float(x) for x in text.split(",") if x.strip()]
    return list(fallback)


def cmd_sweep(args) -> int:
    cfg, out_dir = _prepare(args)
    cfg.require_files(cfg.dataset.interactions)
    deltas = _parse_grid(args.delta_grid, cfg.sweep.delta_grid)
    taus = _parse_grid(args.tau_grid, cfg.sweep.tau_grid)
    if not deltas or not taus:
        raise ConfigError("sweep needs non-empty delta and tau grids")
    if not cfg.sweep.attacks:
        raise ConfigError("sweep needs at least one attack strategy")

    clean = load_interactions(cfg.dataset.interactions, format=cfg.dataset.format)
    per_attack = []
    for strategy in cfg.sweep.attacks:
        attack_cfg = replace(cfg.attack, strategy=strategy)
        poisoned = attacks_mod.run_attack(
            clean, attack_cfg, percentile_cutoff=cfg.prescreen.percentile_cutoff
        )
        matrix = poisoned.matrix
        pop = prescreen_mod.compute_popularity(matrix, cfg.prescreen.percentile_cutoff)
        proj = prescreen_mod.pca_fit_project(matrix, cfg.prescreen.components, cfg.prescreen.weighted)
        max_sim = prescreen_mod.pairwise_max_cosine(proj.projected)
        _, ratios = prescreen_mod.unpopular_ratio_filter(matrix, pop.unpopular_set, 0.0)
        fakes = np.array(poisoned.labels.fake_indices(), dtype=np.int64)
        genuine = np.array(poisoned.labels.genuine_indices(), dtype=np.int64)
        per_attack.append((max_sim, ratios, fakes, genuine))

    rows = []
    for delta in deltas:
        for tau in taus:
            drs, fars = [], []
            for max_sim, ratios, fakes, genuine in per_attack:
                in_s = (max_sim > delta) | (ratios >= tau)
                drs.append(100.0 * in_s[fakes].mean() if fakes.size else 0.0)
                fars.append(100.0 * in_s[genuine].mean() if genuine.size else 0.0)
            rows.append(
                {
                    "delta": delta,
                    "tau": tau,
                    "DR": float(np.mean(drs)),
                    "FAR": float(np.mean(fars)),
                }
            )

    with open(out_dir / SWEEP_CSV, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["delta", "tau", "DR", "FAR"])
        writer.writeheader()
        writer.writerows(rows)
    cfg.save_snapshot(out_dir / "config_snapshot.json")
    print(f"swept {len(rows)} grid cells over {len(cfg.sweep.attacks)} attacks -> {out_dir / SWEEP_CSV}")
    return 0


# -- evaluate-rc -----------------------------------------------------------------


def _align_test(test: InteractionMatrix, target: InteractionMatrix) -> InteractionMatrix:
    """Re-express test entries in the target matrix's index space.

    Entries whose user no longer exists in the target are dropped (their
    users were removed by the defense and cannot be evaluated).
    """
    uindex = target.user_index
    iindex = target.item_index
    u, i, w, ts = [], [], [], []
    for user_id, item_id, weight, stamp in test.to_records():
        if user_id not in uindex:
            continue
        u.append(uindex[user_id])
        i.append(iindex[item_id])
        w.append(weight)
        ts.append(float("nan") if stamp is None else stamp)
    return InteractionMatrix(
        target.user_ids,
        target.item_ids,
        np.array(u, dtype=np.int64),
        np.array(i, dtype=np.int64),
        np.array(w, dtype=np.float64),
        np.array(ts, dtype=np.float64),
    )


def _fake_profiles_from_poisoned(
    poisoned: InteractionMatrix, fake_user_ids: list[str]
) -> list[attacks_mod.FakeProfile]:
    index = poisoned.user_index
    csr = poisoned.csr()
    profiles = []
    for uid in fake_user_ids:
        u = index[uid]
        lo, hi = csr.indptr[u], csr.indptr[u + 1]
        items = csr.indices[lo:hi].astype(np.int64)
        weights = csr.data[lo:hi].astype(np.float64)
        profiles.append(attacks_mod.FakeProfile(uid, items, weights))
    return profiles


def cmd_evaluate_rc(args) -> int:
    cfg, out_dir = _prepare(args)
    ev = cfg.evaluate_rc
    clean_path = ev.clean_interactions or cfg.dataset.interactions
    poisoned_path = ev.poisoned_interactions or str(out_dir / POISONED_CSV)
    manifest_path = ev.manifest or str(out_dir / MANIFEST_JSON)
    cfg.require_files(clean_path, poisoned_path, manifest_path)

    clean = load_interactions(clean_path, format=cfg.dataset.format)
    poisoned = load_interactions(poisoned_path, format="csv")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)

    if ev.flagged_users:
        cfg.require_files(ev.flagged_users)
        with open(ev.flagged_users, "r", encoding="utf-8") as fh:
            flagged_payload = json.load(fh)
        flagged_ids = (
            flagged_payload["flagged_user_ids"]
            if isinstance(flagged_payload, dict)
            else list(flagged_payload)
        )
    else:
        report_path = out_dir / DETECTION_JSON
        if report_path.exists():
            with open(report_path, "r", encoding="utf-8") as fh:
                flagged_ids = json.load(fh)["flagged_user_ids"]
        else:
            flagged_ids = manifest["fake_user_ids"]

    split = split_train_test(clean, holdout=cfg.dataset.holdout, seed=cfg.seed)
    _write_json(out_dir / SPLIT_REPORT_JSON, split.report)

    profiles = _fake_profiles_from_poisoned(poisoned, manifest["fake_user_ids"])
    attacked_train = attacks_mod.merge_and_label(split.train, profiles).matrix
    defended_index = attacked_train.user_index
    drop = [defended_index[uid] for uid in flagged_ids if uid in defended_index]
    defended_train = attacked_train.remove_users(drop)

    results = {}
    for name, train in (("clean", split.train), ("attack", attacked_train), ("defended", defended_train)):
        model = recsys_mod.train_recommender(train, cfg.recsys)
        aligned = _align_test(split.test, train)
        ranking = recsys_mod.rank_metrics(model, aligned, ev.top_n)
        results[name] = {"hr": ranking.hr, "ndcg": ranking.ndcg, "n_pairs": ranking.n_pairs}

    rc = {
        name: {
            "rc_hr": metrics_mod.recommendation_consistency(results[name]["hr"], results["clean"]["hr"]),
            "rc_ndcg": metrics_mod.recommendation_consistency(
                results[name]["ndcg"], results["clean"]["ndcg"]
            ),
        }
        for name in ("attack", "defended")
    }
    payload = {"top_n": ev.top_n, "settings": results, "rc": rc, "flagged_count": len(drop)}
    _write_json(out_dir / RC_JSON, payload)
    cfg.save_snapshot(out_dir / "config_snapshot.json")
    for name in ("clean", "attack", "defended"):
        row = results[name]
        rc_part = (
            f" RC_HR={rc[name]['rc_hr']:.2f}% RC_NDCG={rc[name]['rc_ndcg']:.2f}%"
            if name in rc
            else ""
        )
        print(f"{name}: HR@{ev.top_n}={row['hr']:.3f} NDCG@{ev.top_n}={row['ndcg']:.3f}{rc_part}")
    return 0


# -- build-corpus -----------------------------------------------------------------


def cmd_build_corpus(args) -> int:
    cfg, out_dir = _prepare(args)
    if not cfg.corpus.datasets:
        raise ConfigError("corpus.datasets must list at least one dataset")
    if not cfg.corpus.injectors:
        raise ConfigError("corpus.injectors must list at least one injector")

    datasets = []
    for entry in cfg.corpus.datasets:
        name = entry.get("name")
        if not name:
            raise ConfigError("every corpus dataset needs a name")
        cfg.require_files(entry.get("interactions", ""), entry.get("catalog", ""))
        matrix = load_interactions(entry["interactions"], format=entry.get("format", "csv"))
        catalog = load_item_catalog(entry["catalog"])
        catalog.validate_against(matrix)
        split = split_train_test(matrix, holdout=cfg.dataset.holdout, seed=cfg.seed)
        datasets.append(
            reward_mod.CorpusDataset(
                name=name,
                train=split.train,
                catalog=catalog,
                knowledge=load_prior_knowledge(entry.get("domain", cfg.dataset.domain)),
            )
        )

    records = reward_mod.build_rft_corpus(
        datasets,
        injectors=list(cfg.corpus.injectors),
        regimes=list(cfg.corpus.regimes),
        seed=cfg.seed,
        attack_base=cfg.attack,
        percentile_cutoff=cfg.prescreen.percentile_cutoff,
        mode="label",
        item_char_budget=cfg.audit.item_char_budget,
        max_items=cfg.audit.max_items,
    )
    reward_mod.write_rft_corpus(records, out_dir / CORPUS_JSONL)
    cfg.save_snapshot(out_dir / "config_snapshot.json")
    n_groups = len(datasets) * len(cfg.corpus.injectors) * len(cfg.corpus.regimes)
    n_fake = sum(1 for r in records if r.ground_truth == "Fake")
    n_real = len(records) - n_fake
    print(
        f"built {n_groups} malicious groups "
        f"({len(datasets)} datasets x {len(cfg.corpus.injectors)} injectors x "
        f"{len(cfg.corpus.regimes)} regimes): {n_fake} Fake + {n_real} Real records "
        f"-> {out_dir / CORPUS_JSONL}"
    )
    return 0


# -- report -----------------------------------------------------------------------


def cmd_report(args) -> int:
    out_dir = Path(args.output_dir or "out")
    if not out_dir.exists():
        raise ConfigError(f"output directory {out_dir} does not exist")
    combined: dict = {}
    for name, key in (
        (MANIFEST_JSON, "attack"),
        (DETECTION_JSON, "detection"),
        (RC_JSON, "recommendation_consistency"),
        ("config_snapshot.json", "config"),
    ):
        path = out_dir / name
        if path.exists():
            with open(path, "r", encoding="utf-8") as fh:
                combined[key] = json.load(fh)
    if not combined:
        raise ConfigError(f"no report artifacts found in {out_dir}")
    _write_json(out_dir / COMBINED_JSON, combined)

    det = combined.get("detection", {})
    rc = combined.get("recommendation_consistency", {}).get("rc", {})
    strategy = combined.get("attack", {}).get("strategy", "?")
    row = {
        "attack": strategy,
        "DR": det.get("dr", "n/a"),
        "FAR": det.get("far", "n/a"),
        "RC_HR": rc.get("defended", {}).get("rc_hr", "n/a"),
        "RC_NDCG": rc.get("defended", {}).get("rc_ndcg", "n/a"),
    }
    print(",".join(f"{k}={v}" for k, v in row.items()))
    print(f"combined report -> {out_dir / COMBINED_JSON}")
    return 0


# -- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shillaudit",
        description="Two-stage shilling-attack detection pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_config: bool = True):
        if needs_config:
            p.add_argument("--config", required=True, help="TOML run configuration")
            p.add_argument(
                "--set",
                action="append",
                metavar="SECTION.KEY=VALUE",
                help="override a config value (repeatable)",
            )
        p.add_argument("--output-dir", help="override the configured output directory")

    p_attack = sub.add_parser("attack", help="inject fake users and write the poisoned dataset")
    common(p_attack)
    p_attack.set_defaults(func=cmd_attack)

    p_detect = sub.add_parser("detect", help="prescreen, audit, and score detection")
    common(p_detect)
    p_detect.add_argument("--poisoned", help="poisoned interactions CSV (default: output dir)")
    p_detect.add_argument("--manifest", help="attack manifest JSON (default: output dir)")
    p_detect.add_argument(
        "--mock-auditor",
        choices=["oracle", "always-genuine", "scripted"],
        help="use an offline auditor instead of the HTTP endpoint",
    )
    p_detect.add_argument("--scripted-responses", help="JSONL fixtures for the scripted auditor")
    p_detect.add_argument(
        "--skip-audit", action="store_true", help="stop after Stage I and score the candidate set"
    )
    p_detect.set_defaults(func=cmd_detect)

    p_sweep = sub.add_parser("sweep", help="grid Stage-I DR/FAR over delta and tau")
    common(p_sweep)
    p_sweep.add_argument("--delta-grid", help="comma-separated deltas (overrides config)")
    p_sweep.add_argument("--tau-grid", help="comma-separated taus (overrides config)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_rc = sub.add_parser("evaluate-rc", help="train on clean/attacked/defended and report RC")
    common(p_rc)
    p_rc.set_defaults(func=cmd_evaluate_rc)

    p_corpus = sub.add_parser("build-corpus", help="export fine-tuning records")
    common(p_corpus)
    p_corpus.set_defaults(func=cmd_build_corpus)

    p_report = sub.add_parser("report", help="aggregate artifacts in an output directory")
    p_report.add_argument("--output-dir", help="directory holding command outputs")
    p_report.set_defaults(func=cmd_report, config=None, set=None)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TransportError as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, DatasetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ShillAuditError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
