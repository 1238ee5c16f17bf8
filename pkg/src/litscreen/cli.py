"""Command-line front end: corpora in, trained-and-evaluated reports out.

Subcommands:

- ``run``      cross-validate one or more configured experiments
- ``compare``  line up report files against packaged published baselines
- ``fetch``    retrieve article metadata by id and write a corpus file
- ``synth``    generate a synthetic rated corpus
- ``stats``    token-length statistics for a corpus file

Experiments are described by a JSON config (see ``README.md``).  Given the
same config, seed, and input files, ``run`` output is byte-identical
across invocations; report JSON carries no timestamps.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from .baselines import compare_to_baseline, load_baselines
from .corpus import (
    CRITERIA,
    CorpusError,
    CriteriaSpec,
    default_positive_spec,
    del_fiol_subset_spec,
    filter_subset,
    load_corpus,
    write_corpus,
)
from .ensembles import (
    ARCHITECTURES,
    CascadeClassifier,
    ConjunctionEnsembleClassifier,
    EmbeddingCombinerClassifier,
    IntegratedClassifier,
    TaskSpec,
)
from .evaluation import EvalReport, cross_validate
from .features import HashingFeaturizer, corpus_length_stats
from .models import LogisticClassifier, MlpClassifier, TrainingError
from .pubmed import EutilsTransport, FixtureTransport, fetch_articles, records_to_articles
from .sampling import SamplingPlan
from .synth import SynthConfig, generate_synthetic

__all__ = ["main"]


class CliError(Exception):
    """Configuration or usage problem reported as a single stderr line."""


_MODEL_KINDS = {"logistic": LogisticClassifier, "mlp": MlpClassifier}


def _build_featurizer(cfg) -> HashingFeaturizer:
    cfg = dict(cfg or {})
    if "ngram_orders" in cfg:
        cfg["ngram_orders"] = tuple(cfg["ngram_orders"])
    try:
        return HashingFeaturizer(**cfg)
    except TypeError as exc:
        raise CliError(f"featurizer config: {exc}") from None


def _build_model(cfg):
    cfg = dict(cfg or {})
    kind = cfg.pop("kind", "logistic")
    if kind not in _MODEL_KINDS:
        raise CliError(
            f"unknown model kind {kind!r}; expected one of {sorted(_MODEL_KINDS)}"
        )
    try:
        return _MODEL_KINDS[kind](**cfg)
    except TypeError as exc:
        raise CliError(f"model config: {exc}") from None


def _build_plan(cfg) -> SamplingPlan | None:
    if cfg is None:
        return None
    return SamplingPlan(
        pos_target=int(cfg["pos_target"]), neg_target=int(cfg["neg_target"])
    )


def _build_stage_plans(cfg):
    if cfg is None:
        return None
    if isinstance(cfg, dict):
        return _build_plan(cfg)
    return [_build_plan(entry) for entry in cfg]


def _positive_spec(exp) -> CriteriaSpec:
    raw = exp.get("positive")
    return CriteriaSpec.from_dict(raw) if raw else default_positive_spec()


def _require(exp: dict, key: str):
    if key not in exp:
        raise CliError(f"experiment {exp.get('name', '?')!r}: missing required key {key!r}")
    return exp[key]


def build_estimator(exp: dict):
    """Estimator described by one experiment config block."""
    architecture = _require(exp, "architecture")
    if architecture not in ARCHITECTURES:
        raise CliError(
            f"unknown architecture {architecture!r}; expected one of {sorted(ARCHITECTURES)}"
        )
    spec = _positive_spec(exp)
    order = tuple(exp.get("stage_order") or CRITERIA)
    task = TaskSpec.from_criteria(spec, order=order)
    featurizer = _build_featurizer(exp.get("featurizer"))
    seed = int(_require(exp, "seed"))
    if architecture == "integrated":
        return IntegratedClassifier(
            positive_spec=spec,
            featurizer=featurizer,
            estimator=_build_model(exp.get("model")),
            plan=_build_plan(exp.get("sampling")),
            seed=seed,
        )
    if architecture == "cascade":
        return CascadeClassifier(
            task_spec=task,
            featurizer=featurizer,
            estimator=_build_model(exp.get("model")),
            stage_plans=_build_stage_plans(exp.get("stage_sampling")),
            train_filter=exp.get("train_filter", "gold"),
            stage_thresholds=exp.get("stage_thresholds"),
            seed=seed,
        )
    if architecture == "conjunction":
        return ConjunctionEnsembleClassifier(
            task_spec=task,
            featurizer=featurizer,
            estimator=_build_model(exp.get("model")),
            stage_plans=_build_stage_plans(exp.get("stage_sampling")),
            stage_thresholds=exp.get("stage_thresholds"),
            seed=seed,
        )
    model_cfg = dict(exp.get("model") or {"kind": "mlp"})
    if model_cfg.get("kind", "mlp") != "mlp":
        raise CliError("the combiner architecture requires a model of kind 'mlp'")
    model_cfg["kind"] = "mlp"
    combiner = dict(exp.get("combiner") or {})
    known = {"hidden_dim", "activation", "learning_rate", "epochs", "batch_size", "update_stages"}
    unknown = set(combiner) - known
    if unknown:
        raise CliError(f"combiner config: unknown keys {sorted(unknown)}")
    return EmbeddingCombinerClassifier(
        task_spec=task,
        featurizer=featurizer,
        stage_estimator=_build_model(model_cfg),
        stage_plans=_build_stage_plans(exp.get("stage_sampling")),
        plan=_build_plan(exp.get("sampling")),
        combiner_hidden_dim=int(combiner.get("hidden_dim", 32)),
        combiner_activation=combiner.get("activation", "relu"),
        joint_learning_rate=float(combiner.get("learning_rate", 0.5)),
        joint_epochs=int(combiner.get("epochs", 10)),
        joint_batch_size=int(combiner.get("batch_size", 64)),
        joint_update_stages=bool(combiner.get("update_stages", True)),
        seed=seed,
    )


def _resolve_path(raw: str, base_dir: Path) -> Path:
    path = Path(raw)
    return path if path.is_absolute() else base_dir / path


def load_experiment_corpus(exp: dict, base_dir: Path):
    """Articles for one experiment: a corpus file or a synthetic recipe."""
    source = _require(exp, "corpus")
    if isinstance(source, str):
        corpus = load_corpus(_resolve_path(source, base_dir))
    elif isinstance(source, dict) and set(source) == {"synthetic"}:
        recipe = dict(source["synthetic"])
        if "positive_spec" in recipe:
            recipe["positive_spec"] = CriteriaSpec.from_dict(recipe["positive_spec"])
        corpus = generate_synthetic(SynthConfig(**recipe))
    else:
        raise CliError('corpus must be a file path or {"synthetic": {...}}')
    subset = exp.get("subset")
    if subset is None:
        return list(corpus)
    if subset == "del_fiol":
        return list(filter_subset(corpus, del_fiol_subset_spec()))
    if isinstance(subset, dict):
        return list(filter_subset(corpus, CriteriaSpec.from_dict(subset)))
    raise CliError(f"unknown subset {subset!r}; expected 'del_fiol' or a criteria object")


def run_experiment(exp: dict, out_root: str, base_dir: str) -> dict:
    """Cross-validate one experiment and write its report files."""
    name = exp.get("name") or "experiment"
    estimator = build_estimator(exp)
    articles = load_experiment_corpus(exp, Path(base_dir))
    report = cross_validate(
        estimator,
        articles,
        positive_spec=_positive_spec(exp),
        k=int(exp.get("k", 10)),
        seed=int(_require(exp, "seed")),
        recall_targets=tuple(exp.get("recall_targets") or ()),
        config=exp,
    )
    out_dir = Path(out_root) / name
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json())
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    (out_dir / "report.txt").write_text(f"generated at {stamp}\n\n" + report.to_text())
    (out_dir / "folds.csv").write_text(report.folds_csv())
    return {
        "name": name,
        "architecture": exp.get("architecture"),
        "precision": report.precision,
        "recall": report.recall,
        "f_measure": report.f_measure,
        "report": str(out_dir / "report.json"),
    }


def _comparison_table(rows: list[dict]) -> str:
    width = max(len(r["name"]) for r in rows)
    lines = ["architecture comparison"]
    lines.append(
        f"  {'name':<{width}}  {'architecture':<12}  {'P':>7} {'R':>7} {'F':>7}"
    )
    for row in rows:
        lines.append(
            f"  {row['name']:<{width}}  {row['architecture'] or '':<12}  "
            f"{row['precision']:7.4f} {row['recall']:7.4f} {row['f_measure']:7.4f}"
        )
    return "\n".join(lines) + "\n"


def _load_config(path: Path) -> tuple[list[dict], str | None]:
    """Experiment blocks plus the config's own output directory, if any."""
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path}: invalid JSON: {exc}") from None
    out = None
    if isinstance(data, dict) and "experiments" in data:
        experiments = data["experiments"]
        out = data.get("out")
    else:
        experiments = [data]
    if not isinstance(experiments, list) or not experiments:
        raise CliError(f"config {path}: 'experiments' must be a non-empty list")
    return [dict(exp) for exp in experiments], out


def _validate_run_config(experiments: list[dict], base_dir: Path) -> None:
    # fail before any training starts, not after the third experiment
    names = set()
    for exp in experiments:
        name = exp.get("name") or "experiment"
        if name in names:
            raise CliError(f"duplicate experiment name {name!r}")
        names.add(name)
        _require(exp, "seed")
        build_estimator(exp)
        source = _require(exp, "corpus")
        if isinstance(source, str):
            resolved = _resolve_path(source, base_dir)
            if not resolved.exists():
                raise CliError(f"experiment {name!r}: corpus file not found: {resolved}")


def cmd_run(args) -> int:
    config_path = Path(args.config)
    experiments, config_out = _load_config(config_path)
    base_dir = config_path.parent
    if args.seed is not None:
        for exp in experiments:
            exp["seed"] = args.seed
    if args.out:
        out_root = Path(args.out)
    elif config_out:
        out_root = _resolve_path(config_out, base_dir)
    else:
        out_root = base_dir / "runs"
    _validate_run_config(experiments, base_dir)
    if args.jobs > 1 and len(experiments) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                pool.submit(run_experiment, exp, str(out_root), str(base_dir))
                for exp in experiments
            ]
            rows = [f.result() for f in futures]
    else:
        rows = [run_experiment(exp, str(out_root), str(base_dir)) for exp in experiments]
    for row in rows:
        print(
            f"{row['name']}: P {row['precision']:.4f} R {row['recall']:.4f} "
            f"F {row['f_measure']:.4f} -> {row['report']}"
        )
    if len(rows) > 1:
        table = _comparison_table(rows)
        (out_root / "comparison.txt").write_text(table)
        (out_root / "comparison.json").write_text(
            json.dumps(rows, indent=2, sort_keys=True) + "\n"
        )
        print(f"comparison table -> {out_root / 'comparison.txt'}")
    return 0


def cmd_compare(args) -> int:
    table = load_baselines()
    if args.baselines:
        missing = [b for b in args.baselines if b not in table]
        if missing:
            raise CliError(
                f"unknown baselines {missing}; available: {sorted(table)}"
            )
        selected = [table[b] for b in args.baselines]
    else:
        selected = list(table.values())
    reports = []
    for raw in args.reports:
        path = Path(raw)
        try:
            report = EvalReport.from_json(path.read_text())
        except FileNotFoundError:
            raise CliError(f"report file not found: {path}") from None
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise CliError(f"malformed report {path}: {exc}") from None
        name = report.config.get("name") or path.stem
        reports.append((name, report))
    lines = ["systems:"]
    width = max(
        [len(n) for n, _ in reports] + [len(b.name) for b in selected]
    )
    lines.append(f"  {'name':<{width}}  {'P':>7} {'R':>7} {'F':>7}")
    for name, report in reports:
        lines.append(
            f"  {name:<{width}}  {report.precision:7.4f} {report.recall:7.4f} {report.f_measure:7.4f}"
        )
    for baseline in selected:
        lines.append(
            f"  {baseline.name:<{width}}  {baseline.precision:7.4f} "
            f"{baseline.recall:7.4f} {baseline.f_measure:7.4f}"
        )
    lines.append("")
    lines.append("error rate reduction vs baselines:")
    comparisons = []
    for name, report in reports:
        for baseline in selected:
            row = compare_to_baseline(report.f_measure, baseline)
            row["report"] = name
            comparisons.append(row)
            lines.append(
                f"  {name} vs {baseline.name}: {row['error_rate_reduction'] * 100:.1f}% "
                f"(F {report.f_measure:.4f} vs {row['baseline_f']:.4f})"
            )
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        payload = {
            "reports": [
                {"name": n, "precision": r.precision, "recall": r.recall, "f_measure": r.f_measure}
                for n, r in reports
            ],
            "baselines": [
                {
                    "name": b.name,
                    "precision": b.precision,
                    "recall": b.recall,
                    "f_measure": b.f_measure,
                }
                for b in selected
            ],
            "comparisons": comparisons,
        }
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def _gather_ids(args) -> list[str]:
    ids: list[str] = []
    if args.ids:
        ids.extend(part.strip() for part in args.ids.split(",") if part.strip())
    if args.ids_file:
        try:
            text = Path(args.ids_file).read_text()
        except FileNotFoundError:
            raise CliError(f"ids file not found: {args.ids_file}") from None
        for line in text.splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                ids.append(line)
    if not ids:
        raise CliError("no ids given: use --ids and/or --ids-file")
    return ids


def cmd_fetch(args) -> int:
    ids = _gather_ids(args)
    if args.fixtures:
        transport = FixtureTransport(args.fixtures)
    else:
        transport = EutilsTransport(email=args.email)
    records, failures = fetch_articles(ids, transport)
    ratings = None
    if args.ratings:
        try:
            ratings = json.loads(Path(args.ratings).read_text())
        except FileNotFoundError:
            raise CliError(f"ratings file not found: {args.ratings}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"ratings {args.ratings}: invalid JSON: {exc}") from None
        fetched = {r.id for r in records}
        ratings = {k: v for k, v in ratings.items() if k in fetched}
    articles = records_to_articles(records, ratings=ratings)
    write_corpus(articles, args.out)
    for failure in failures:
        print(f"litscreen: fetch failed {failure.id}: {failure.reason}", file=sys.stderr)
    print(f"fetched {len(records)} of {len(ids)} ids -> {args.out}")
    if not records:
        raise CliError("no ids could be fetched")
    return 0


def cmd_synth(args) -> int:
    signal = args.signal
    try:
        signal = float(signal)
    except ValueError:
        try:
            signal = json.loads(signal)
        except json.JSONDecodeError:
            raise CliError(
                f"--signal must be a number or a JSON object, got {signal!r}"
            ) from None
    config = SynthConfig(
        size=args.size, neg_per_pos=args.neg_per_pos, signal=signal, seed=args.seed
    )
    corpus = generate_synthetic(config)
    write_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} synthetic articles -> {args.out}")
    return 0


def cmd_stats(args) -> int:
    corpus = load_corpus(args.corpus)
    percentiles = tuple(int(p) for p in args.percentiles.split(","))
    stats = corpus_length_stats(
        list(corpus), use_pt_tag=args.pt_tags, percentiles=percentiles
    )
    print(f"articles: {stats.n}")
    print(f"tokens per article: mean {stats.mean:.2f}, max {stats.max}")
    for p, value in stats.percentiles.items():
        print(f"  p{p}: {value} tokens")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="litscreen",
        description="Train and evaluate multi-criteria document screening models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="cross-validate configured experiments")
    p_run.add_argument("--config", required=True, help="experiment config JSON")
    p_run.add_argument("--seed", type=int, default=None, help="override every experiment's seed")
    p_run.add_argument("--out", default=None, help="output root (default: <config dir>/runs)")
    p_run.add_argument("--jobs", type=int, default=1, help="experiments to run in parallel")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare reports against published baselines")
    p_cmp.add_argument("reports", nargs="+", help="report.json files from 'run'")
    p_cmp.add_argument(
        "--baselines", nargs="*", default=None, help="baseline names (default: all packaged)"
    )
    p_cmp.add_argument("--out", default=None, help="also write the comparison as JSON")
    p_cmp.set_defaults(func=cmd_compare)

    p_fetch = sub.add_parser("fetch", help="fetch article metadata into a corpus file")
    p_fetch.add_argument("--ids", default=None, help="comma-separated ids")
    p_fetch.add_argument("--ids-file", default=None, help="file with one id per line")
    p_fetch.add_argument("--out", required=True, help="output corpus (JSON lines)")
    p_fetch.add_argument(
        "--fixtures", default=None, help="serve <id>.xml files from this directory instead of the network"
    )
    p_fetch.add_argument("--ratings", default=None, help="JSON sidecar: id -> criterion ratings")
    p_fetch.add_argument("--email", default=None, help="contact email sent with live requests")
    p_fetch.set_defaults(func=cmd_fetch)

    p_synth = sub.add_parser("synth", help="generate a synthetic rated corpus")
    p_synth.add_argument("--size", type=int, required=True)
    p_synth.add_argument("--neg-per-pos", type=float, default=32.0)
    p_synth.add_argument("--signal", default="1.0", help="number or JSON object per criterion")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_stats = sub.add_parser("stats", help="token-length statistics for a corpus")
    p_stats.add_argument("--corpus", required=True)
    p_stats.add_argument("--pt-tags", action="store_true", help="count prepended tag tokens too")
    p_stats.add_argument("--percentiles", default="69,92,95")
    p_stats.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, CorpusError, TrainingError, ValueError, TypeError, OSError) as exc:
        print(f"litscreen: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
