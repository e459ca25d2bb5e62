"""Command-line frontend.

Subcommands: distill, evaluate, sweep, explain, importance.  Every command
writes a manifest first into a run directory addressed by the hash of its
resolved configuration, so reruns of the same configuration land in the same
directory and completed runs are never mutated.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from distillkit.core import DistillkitError, load_dataset, r2_score, save_dataset
from distillkit.distill import (
    SWEEP_RATIOS,
    DistillationConfig,
    distill_gait,
    load_policy,
    rollout_with_ratio,
    save_policy,
    write_episode_log,
)
from distillkit.ebm import local_explanation
from distillkit.envs import ACTION_NAMES, GAITS, make_env, make_expert, observation_schema
from distillkit.evalreport import (
    build_manifest,
    build_r2_table,
    build_ratio_sweep,
    export_importance_heatmap,
    write_explanations_jsonl,
    write_manifest,
)
from distillkit.gbm import (
    gbm_feature_importance,
    partial_dependence,
    permutation_importance,
    top_k_importance_report,
)
from distillkit.symreg import to_infix

OUT_ROOT_ENV = "DISTILLKIT_OUT_ROOT"
DONE_MARKER = "DONE"


def _out_root(args) -> Path:
    root = args.out or os.environ.get(OUT_ROOT_ENV) or "runs"
    return Path(root)


def _prepare_run_dir(root: Path, kind: str, manifest: dict) -> tuple[Path, bool]:
    """Create (or resume) the content-addressed run directory.

    Returns (path, already_complete).  A completed directory (DONE marker)
    is left untouched.
    """
    run_dir = root / f"{kind}-{manifest['config_hash']}"
    if (run_dir / DONE_MARKER).exists():
        return run_dir, True
    run_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(run_dir / "manifest.json", manifest)
    return run_dir, False


def _finish_run_dir(run_dir: Path) -> None:
    (run_dir / DONE_MARKER).write_text("complete\n", encoding="utf-8")


def _load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise DistillkitError("config file must hold a JSON object")
    return obj


def _distill_config(args) -> DistillationConfig:
    obj = _load_config_file(args.config) if args.config else {}
    for key, value in (("gait", args.gait), ("family", args.family),
                       ("seed", args.seed), ("episode_length", args.steps),
                       ("max_episodes", args.episodes)):
        if value is not None:
            obj[key] = value
    return DistillationConfig.from_json(obj)


def cmd_distill(args) -> int:
    config = _distill_config(args)
    manifest = build_manifest("distill", config.to_json())
    run_dir, done = _prepare_run_dir(_out_root(args), "distill", manifest)
    if done:
        print(run_dir)
        return 0
    result = distill_gait(config)
    save_policy(result.policy, run_dir / "model.json")
    save_dataset(result.dataset, run_dir / "dataset.csv")
    write_episode_log(run_dir / "episodes.csv", result.episodes)
    _finish_run_dir(run_dir)
    print(run_dir)
    return 0


def cmd_evaluate(args) -> int:
    policy = load_policy(args.model)
    ratios = _parse_ratios(args.ratios)
    config = {"model": str(args.model), "gait": args.gait, "ratios": ratios,
              "episodes": args.episodes, "seed": args.seed}
    manifest = build_manifest("evaluate", config)
    run_dir, done = _prepare_run_dir(_out_root(args), "evaluate", manifest)
    if done:
        print(run_dir)
        return 0
    expert = make_expert(args.gait)
    env = make_env(args.gait)
    import csv as _csv
    with open(run_dir / "rewards.csv", "w", newline="",
              encoding="utf-8") as fh:
        w = _csv.writer(fh)
        w.writerow(["ratio", "mean_episode_reward"])
        for ratio in ratios:
            val = rollout_with_ratio(env, expert, policy, ratio,
                                     args.episodes, args.seed)
            w.writerow([repr(ratio), repr(val)])
    _finish_run_dir(run_dir)
    print(run_dir)
    return 0


def _parse_ratios(text: str) -> list[float]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if "/" in tok:
            num, den = tok.split("/")
            out.append(float(num) / float(den))
        else:
            out.append(float(tok))
    if not out:
        raise DistillkitError("empty ratio list")
    return out


def _find_models(models_root: Path) -> dict:
    """Index completed distill runs by (gait, family, seed)."""
    index = {}
    if models_root is None:
        return index
    for manifest_path in sorted(models_root.glob("distill-*/manifest.json")):
        try:
            with open(manifest_path, encoding="utf-8") as fh:
                m = json.load(fh)
        except (OSError, json.JSONDecodeError):
            continue
        cfg = m.get("config", {})
        model_path = manifest_path.parent / "model.json"
        if model_path.exists():
            key = (cfg.get("gait"), cfg.get("family"), cfg.get("seed"))
            index[key] = model_path
    return index


def cmd_sweep(args) -> int:
    families = [f.strip() for f in args.families.split(",") if f.strip()]
    gaits = [g.strip() for g in args.gaits.split(",") if g.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    ratios = _parse_ratios(args.ratios)
    if not families or not gaits or not seeds:
        raise DistillkitError("sweep grid is empty")
    config = {"families": families, "gaits": gaits, "seeds": seeds,
              "ratios": ratios, "episodes": args.episodes,
              "models_root": str(args.models_root) if args.models_root else None}
    manifest = build_manifest("sweep", config)
    run_dir, done = _prepare_run_dir(_out_root(args), "sweep", manifest)
    if done:
        print(run_dir)
        return 0
    model_index = _find_models(Path(args.models_root)
                               if args.models_root else None)
    results: dict = {}
    r2_scores: dict = {}
    for family in families:
        for gait in gaits:
            cell_rewards: dict = {}
            for seed in seeds:
                if args.models_root:
                    path = model_index.get((gait, family, seed))
                    if path is None:
                        print(f"skipping {family}/{gait}/seed{seed}: "
                              f"no model found", file=sys.stderr)
                        continue
                    policy = load_policy(path)
                else:
                    dcfg = DistillationConfig(gait=gait, family=family,
                                              seed=seed)
                    result = distill_gait(dcfg)
                    policy = result.policy
                    r2_scores.setdefault(family, {})[gait] = \
                        result.episodes[-1].test_r2
                expert = make_expert(gait)
                env = make_env(gait)
                for ratio in ratios:
                    val = rollout_with_ratio(env, expert, policy, ratio,
                                             args.episodes, seed)
                    cell_rewards.setdefault(ratio, []).append(val)
            if cell_rewards:
                results.setdefault(family, {})[gait] = {
                    r: float(np.mean(v)) for r, v in cell_rewards.items()}
    if not results:
        raise DistillkitError("sweep produced no cells")
    sweep = build_ratio_sweep(results)
    sweep.to_csv(run_dir / "sweep.csv")
    for gait in sweep.gaits():
        (run_dir / f"sweep_{gait}.svg").write_text(sweep.to_svg(gait),
                                                   encoding="utf-8")
    if r2_scores:
        table = build_r2_table(r2_scores, families, gaits)
        table.to_csv(run_dir / "r2_table.csv")
        print(table.to_text())
    _finish_run_dir(run_dir)
    print(run_dir)
    return 0


def _observations_from(path) -> np.ndarray:
    schema = observation_schema()
    ds = load_dataset(path, schema, ACTION_NAMES)
    return ds.observations()


def cmd_explain(args) -> int:
    policy = load_policy(args.model)
    config = {"model": str(args.model), "observations": str(args.observations),
              "feature": args.feature, "grid_size": args.grid_size}
    manifest = build_manifest("explain", config)
    run_dir, done = _prepare_run_dir(_out_root(args), "explain", manifest)
    if done:
        print(run_dir)
        return 0
    supported = {"ebm": "local term contributions",
                 "gbm": "partial dependence (needs --feature)",
                 "symbolic": "closed-form expression text"}
    if policy.family == "ebm":
        X = _observations_from(args.observations)
        records = []
        for i, x in enumerate(X[:args.limit]):
            per_output = {}
            for name, model in zip(policy.action_names, policy.models):
                parts = local_explanation(model, x)
                per_output[name] = {
                    "prediction": model.predict_row(x),
                    "intercept": model.intercept,
                    "contributions": [[n, c] for n, c in parts],
                }
            records.append({"row": i, "outputs": per_output})
        write_explanations_jsonl(run_dir / "explanations.jsonl", records)
    elif policy.family == "gbm":
        if args.feature is None:
            raise DistillkitError(
                "gbm explanations are partial-dependence curves; pass "
                "--feature <index>")
        X = _observations_from(args.observations)
        lo = float(X[:, args.feature].min())
        hi = float(X[:, args.feature].max())
        if hi <= lo:
            hi = lo + 1.0
        grid = np.linspace(lo, hi, args.grid_size)
        import csv as _csv
        with open(run_dir / f"pd_feature_{args.feature}.csv", "w",
                  newline="", encoding="utf-8") as fh:
            w = _csv.writer(fh)
            w.writerow(["value"] + [f"pd_{a}" for a in policy.action_names])
            curves = [partial_dependence(m, args.feature, grid, X)
                      for m in policy.models]
            for gi, v in enumerate(grid):
                w.writerow([repr(float(v))]
                           + [repr(float(c[gi])) for c in curves])
    elif policy.family == "symbolic":
        lines = [f"{name}: {expr}" for name, expr in
                 zip(policy.action_names, policy.infix_expressions())]
        (run_dir / "expressions.txt").write_text("\n".join(lines) + "\n",
                                                 encoding="utf-8")
    else:
        raise DistillkitError(
            f"no explanation for family {policy.family!r}; supported: "
            + "; ".join(f"{k} -> {v}" for k, v in supported.items()))
    _finish_run_dir(run_dir)
    print(run_dir)
    return 0


def cmd_importance(args) -> int:
    policy = load_policy(args.model)
    if policy.family != "gbm":
        raise DistillkitError("importance maps need a gbm model")
    config = {"model": str(args.model), "dataset": str(args.dataset),
              "n_repeats": args.n_repeats, "seed": args.seed,
              "top_k": args.top_k}
    manifest = build_manifest("importance", config)
    run_dir, done = _prepare_run_dir(_out_root(args), "importance", manifest)
    if done:
        print(run_dir)
        return 0
    schema = observation_schema()
    ds = load_dataset(args.dataset, schema, ACTION_NAMES)
    X = ds.observations()
    Y = ds.expert_labels()
    gain = np.stack([gbm_feature_importance(m) for m in policy.models])
    perm = np.stack([
        permutation_importance(m, X, Y[:, o], n_repeats=args.n_repeats,
                               seed=args.seed)
        for o, m in enumerate(policy.models)])
    export_importance_heatmap(gain, schema, policy.action_names,
                              "feature importance (split gain)",
                              run_dir / "feature_importance.csv",
                              run_dir / "feature_importance.svg")
    export_importance_heatmap(perm, schema, policy.action_names,
                              "permutation importance",
                              run_dir / "permutation_importance.csv",
                              run_dir / "permutation_importance.svg")
    rows = top_k_importance_report(
        {"feature_importance": gain, "permutation_importance": perm},
        schema, args.top_k)
    import csv as _csv
    with open(run_dir / "top_features.csv", "w", newline="",
              encoding="utf-8") as fh:
        w = _csv.writer(fh)
        w.writerow(["method", "output", "rank", "feature", "score"])
        for row in rows:
            for rank, (name, score) in enumerate(
                    zip(row["top_features"], row["top_scores"]), start=1):
                w.writerow([row["method"],
                            policy.action_names[row["output"]],
                            rank, name, repr(score)])
    _finish_run_dir(run_dir)
    print(run_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="distillkit",
        description="Distill expert control policies into interpretable "
                    "models and explain them.")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("distill", help="run the alternation-curriculum "
                                       "imitation loop")
    d.add_argument("--gait", choices=GAITS)
    d.add_argument("--family", choices=("gbm", "ebm", "symbolic"))
    d.add_argument("--seed", type=int)
    d.add_argument("--episodes", type=int, help="override max_episodes")
    d.add_argument("--steps", type=int, help="override episode_length")
    d.add_argument("--config", help="JSON config file")
    d.add_argument("--out", help=f"output root (default ${OUT_ROOT_ENV} "
                                 f"or ./runs)")
    d.set_defaults(func=cmd_distill)

    e = sub.add_parser("evaluate", help="closed-loop rollouts of a saved "
                                        "model")
    e.add_argument("--model", required=True)
    e.add_argument("--gait", required=True, choices=GAITS)
    e.add_argument("--ratios", default=",".join(f"{r:g}" for r in SWEEP_RATIOS))
    e.add_argument("--episodes", type=int, default=26)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="reward-vs-ratio grid over families "
                                     "and gaits")
    s.add_argument("--families", default="gbm,ebm,symbolic")
    s.add_argument("--gaits", default=",".join(GAITS))
    s.add_argument("--ratios", default="0,1/8,1/6,1/4,1/2,1")
    s.add_argument("--episodes", type=int, default=26)
    s.add_argument("--seeds", default="0")
    s.add_argument("--models-root", help="reuse models from distill runs "
                                         "under this directory")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    x = sub.add_parser("explain", help="model explanations (family-specific)")
    x.add_argument("--model", required=True)
    x.add_argument("--observations", help="dataset CSV supplying rows")
    x.add_argument("--feature", type=int, help="feature index for gbm "
                                               "partial dependence")
    x.add_argument("--grid-size", type=int, default=25)
    x.add_argument("--limit", type=int, default=50,
                   help="max rows to explain")
    x.add_argument("--out")
    x.set_defaults(func=cmd_explain)

    i = sub.add_parser("importance", help="feature/permutation importance "
                                          "maps for a gbm model")
    i.add_argument("--model", required=True)
    i.add_argument("--dataset", required=True)
    i.add_argument("--n-repeats", type=int, default=5)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--top-k", type=int, default=3)
    i.add_argument("--out")
    i.set_defaults(func=cmd_importance)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DistillkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
