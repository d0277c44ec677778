"""Command line pipeline: one stage per command, artifacts on disk."""

from __future__ import annotations

import argparse
import functools
import json
import logging
import math
import platform
import sys
import time
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numba
import numpy as np
import scipy
import voluptuous as vol

from .common import sha256_bytes, sha256_file
from .config import RunConfig, load_config
from .const import (
    BENCH_FILE,
    CHECKPOINT_DIR,
    COMPARE_FILE,
    CONF_DENSE_WIDTHS,
    CONF_DETERMINISTIC,
    CONF_N_SAMPLES,
    CONF_N_TEST,
    CONF_OUT,
    CONF_SCHEMA,
    CONF_SEED,
    CONF_TEST,
    CONF_TRAIN,
    EVAL_SUFFIX,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_VALIDATION,
    FOREST_FILE,
    FUZZY_FOREST_FILE,
    LATENCY_SAMPLES,
    PREDICTIONS_FILE,
    RUN_MANIFEST_SUFFIX,
    SCHEMA_FILE,
    SECTION_BENCH,
    SECTION_DATA,
    SECTION_RUN,
    SECTION_SYNTH,
    STACKED_FILE,
    TEST_FILE,
    THREE_STEP_BUNDLE,
    TRAIN_FILE,
    TWO_STEP_BUNDLE,
    VERSION,
)
from .data import (
    Dataset,
    FeatureSchema,
    featurize_records,
    gen_synthetic,
    parse_samples,
    parse_schema,
    serialize_samples,
    serialize_schema,
)
from .errors import DefError, StageDependencyError, ValidationError
from .fuzzy import complexity_stats, export_fuzzy_forest, init_fuzzy, joint_train
from .gbdt import export_forest, import_forest, train_gbdt
from .nn import (
    DeepCrossingModel,
    extract_stacking,
    load_checkpoint,
    mean_log_loss,
    predict_proba,
    predict_sample,
    read_stacked,
    save_checkpoint,
    train_deep_crossing,
    write_stacked,
)
from .serve import (
    DenseReference,
    ModelBundle,
    Predictor,
    bench,
    bench_dense,
    load_bundle,
    make_bundle,
    relative_log_loss,
    save_bundle,
)


_LOGGER = logging.getLogger(__name__)


# ── Reports ───────────────────────────────────────────────────────────


@dataclass(frozen=True)
class EvalReport:
    """Log loss of one model on one test set."""

    name: str
    log_loss: float
    n_samples: int
    test_digest: str
    model_digest: str
    relative_log_loss: float | None = None
    baseline: str | None = None
    latency_ns: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> EvalReport:
        try:
            return cls(**json.loads(text))
        except (json.JSONDecodeError, TypeError) as err:
            raise ValidationError(f"not an eval report: {err}") from err


@dataclass(frozen=True)
class Comparison:
    relative_log_loss: float
    latency_ratio: float
    text: str
    csv_row: str


def compare(baseline: EvalReport, candidate: EvalReport) -> Comparison:
    """Side-by-side relative log loss and latency of two reports."""
    if baseline.test_digest != candidate.test_digest:
        raise ValidationError(
            "reports were computed on different test sets "
            f"({baseline.test_digest[:12]} vs {candidate.test_digest[:12]})"
        )
    relative = relative_log_loss(candidate.log_loss, baseline.log_loss)
    if baseline.latency_ns and candidate.latency_ns:
        ratio = candidate.latency_ns / baseline.latency_ns
    elif baseline.latency_ns == candidate.latency_ns:
        ratio = 1.0
    else:
        ratio = math.nan
    rows = [
        ("model", "relative log loss", "prediction time (ms)"),
        (baseline.name, "100.00", _ms(baseline.latency_ns)),
        (candidate.name, f"{relative:.2f}", _ms(candidate.latency_ns)),
    ]
    widths = [max(len(row[k]) for row in rows) for k in range(3)]
    text = "\n".join(
        "  ".join(cell.ljust(widths[k]) for k, cell in enumerate(row)).rstrip() for row in rows
    )
    csv_row = f"{baseline.name},{candidate.name},{relative:.4f},{ratio:.4f}"
    return Comparison(relative, ratio, text, csv_row)


def _ms(latency_ns: float | None) -> str:
    return "-" if latency_ns is None else f"{latency_ns / 1e6:.3f}"


# ── Manifest ──────────────────────────────────────────────────────────


def _digest_path(path: Path) -> str:
    if path.is_dir():
        parts = [
            f"{child.name}:{sha256_file(child)}" for child in sorted(path.iterdir()) if child.is_file()
        ]
        return sha256_bytes("\n".join(parts).encode("utf-8"))
    return sha256_file(path)


def library_versions() -> dict[str, str]:
    return {
        "deep_embedding_forest": VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "voluptuous": vol.__version__,
    }


@dataclass
class RunContext:
    command: str
    argv: list[str]
    config: RunConfig
    inputs: list[Path] = field(default_factory=list)
    outputs: list[Path] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def out(self) -> Path:
        return self.config.out

    def input(self, path: Path | str, stage: str | None = None) -> Path:
        """Register an input artifact; a missing one names the stage that makes it."""
        resolved = Path(path)
        if not resolved.exists():
            if stage is not None:
                raise StageDependencyError(
                    f"{self.command} needs {resolved}; run '{stage}' first"
                )
            raise ValidationError(f"input {resolved} does not exist")
        self.inputs.append(resolved)
        return resolved

    def output(self, name: str | Path) -> Path:
        path = Path(name)
        if not path.is_absolute() and path.parent == Path("."):
            path = self.out / path
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(path)
        return path

    def write_manifest(self) -> Path:
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "config": self.config.as_dict(),
            "config_digest": self.config.digest(),
            "seed": self.config.seed,
            "versions": library_versions(),
            "inputs": {str(p): _digest_path(p) for p in self.inputs},
            "outputs": {str(p): _digest_path(p) for p in self.outputs if p.exists()},
            "extra": self.extra,
        }
        path = self.out / f"{self.command}{RUN_MANIFEST_SUFFIX}"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


# ── Loading helpers ───────────────────────────────────────────────────


def _read_schema(ctx: RunContext, path: str | None) -> FeatureSchema:
    candidate = path or ctx.config.section(SECTION_DATA).get(CONF_SCHEMA)
    if candidate is None:
        raise ValidationError("no schema given (use --schema or [data] schema)")
    return parse_schema(ctx.input(candidate, "gen-synth").read_text(encoding="utf-8"))


def _read_samples(ctx: RunContext, path: str | None, schema: FeatureSchema, key: str) -> Dataset:
    candidate = path or ctx.config.section(SECTION_DATA).get(key)
    if candidate is None:
        raise ValidationError(f"no {key} samples given")
    with ctx.input(candidate, "gen-synth").open(encoding="utf-8") as handle:
        return parse_samples(handle, schema)


def _write_samples(path: Path, dataset: Dataset) -> None:
    with path.open("w", encoding="utf-8") as handle:
        handle.writelines(serialize_samples(dataset))


def _load_model(ctx: RunContext, args: argparse.Namespace) -> tuple[Any, str]:
    """A bundle, a (checkpoint, forest) pair or a checkpoint alone, plus its digest."""
    if getattr(args, "bundle", None):
        path = ctx.input(args.bundle, "fuzz-tune")
        return load_bundle(path), _digest_path(path)
    if not getattr(args, "checkpoint", None):
        raise ValidationError("give --bundle or --checkpoint")
    ckpt_path = ctx.input(args.checkpoint, "train-embed")
    model = load_checkpoint(ckpt_path)
    digest = _digest_path(ckpt_path)
    if getattr(args, "forest", None):
        forest_path = ctx.input(args.forest, "train-forest")
        forest = import_forest(forest_path.read_text(encoding="utf-8"))
        bundle = make_bundle(model.schema, model.embeddings, forest, ctx.config.digest())
        return bundle, sha256_bytes(f"{digest}:{_digest_path(forest_path)}".encode())
    return model, digest


# ── Commands ──────────────────────────────────────────────────────────


def cmd_featurize(ctx: RunContext, args: argparse.Namespace) -> None:
    schema = _read_schema(ctx, args.schema)
    with ctx.input(args.input).open(encoding="utf-8") as handle:
        dataset = featurize_records(handle, schema)
    _write_samples(ctx.output(args.output or TRAIN_FILE), dataset)
    _LOGGER.info("Featurized %d records", len(dataset))


def cmd_gen_synth(ctx: RunContext, args: argparse.Namespace) -> None:
    n_test = ctx.config.section(SECTION_SYNTH)[CONF_N_TEST]
    full = ctx.config.synth_config()
    combined = gen_synthetic(
        ctx.config.synth_config(n_samples=full.n_samples + n_test)
    )
    train = combined.subset(range(full.n_samples))
    test = combined.subset(range(full.n_samples, full.n_samples + n_test))
    ctx.output(SCHEMA_FILE).write_text(serialize_schema(combined.schema), encoding="utf-8")
    _write_samples(ctx.output(TRAIN_FILE), train)
    _write_samples(ctx.output(TEST_FILE), test)
    ctx.extra["train_digest"] = train.digest()
    ctx.extra["test_digest"] = test.digest()


def cmd_train_embed(ctx: RunContext, args: argparse.Namespace) -> None:
    schema = _read_schema(ctx, args.schema)
    train = _read_samples(ctx, args.train, schema, CONF_TRAIN)
    config = ctx.config.train_config()
    model = train_deep_crossing(train, config)
    save_checkpoint(model, ctx.output(CHECKPOINT_DIR), config)
    ctx.extra["loss_history"] = model.loss_history


def cmd_extract_stack(ctx: RunContext, args: argparse.Namespace) -> None:
    model = load_checkpoint(ctx.input(args.checkpoint, "train-embed"))
    dataset = _read_samples(ctx, args.data, model.schema, CONF_TRAIN)
    stacked = extract_stacking(dataset, model)
    with ctx.output(args.output or STACKED_FILE).open("w", encoding="utf-8") as handle:
        write_stacked(stacked, handle)
    ctx.extra["stacking_dim"] = stacked.dim


def cmd_train_forest(ctx: RunContext, args: argparse.Namespace) -> None:
    if args.import_path:
        forest = import_forest(ctx.input(args.import_path).read_text(encoding="utf-8"))
        _LOGGER.info("Seeding from external forest with %d trees", len(forest))
    else:
        with ctx.input(args.stacked, "extract-stack").open(encoding="utf-8") as handle:
            stacked = read_stacked(handle)
        forest = train_gbdt(stacked, ctx.config.gbdt_config())
    ctx.output(FOREST_FILE).write_text(export_forest(forest), encoding="utf-8")
    if args.checkpoint:
        model = load_checkpoint(ctx.input(args.checkpoint, "train-embed"))
        bundle = make_bundle(
            model.schema, model.embeddings, forest, ctx.config.digest(), ctx.config.deterministic
        )
        save_bundle(bundle, ctx.output(TWO_STEP_BUNDLE))
    if forest.trees:
        stats = complexity_stats(forest)
        ctx.extra["complexity"] = asdict(stats)


def cmd_fuzz_tune(ctx: RunContext, args: argparse.Namespace) -> None:
    forest_path = ctx.input(args.forest, "train-forest")
    model = load_checkpoint(ctx.input(args.checkpoint, "train-embed"))
    train = _read_samples(ctx, args.train, model.schema, CONF_TRAIN)
    forest = import_forest(forest_path.read_text(encoding="utf-8"))
    config = ctx.config.fuzzy_config()
    fuzzy = init_fuzzy(forest, extract_stacking(train, model), config.kappa)
    result = joint_train(train, model.embeddings, fuzzy, config)
    ctx.output(FUZZY_FOREST_FILE).write_text(export_fuzzy_forest(result.fuzzy), encoding="utf-8")
    bundle = make_bundle(
        model.schema, result.embeddings, result.fuzzy, ctx.config.digest(), ctx.config.deterministic
    )
    save_bundle(bundle, ctx.output(THREE_STEP_BUNDLE))
    ctx.extra.update(
        initial_hard_loss=result.initial_hard_loss,
        initial_fuzzy_loss=result.initial_fuzzy_loss,
        final_loss=result.final_loss,
        epoch_losses=result.epoch_losses,
    )


def _probabilities(model: Any, dataset: Dataset) -> np.ndarray:
    if isinstance(model, ModelBundle):
        return Predictor(model).predict_batch(dataset)
    return predict_proba(model, dataset)


def cmd_predict(ctx: RunContext, args: argparse.Namespace) -> None:
    model, _ = _load_model(ctx, args)
    dataset = _read_samples(ctx, args.data, model.schema, CONF_TEST)
    probs = _probabilities(model, dataset)
    with ctx.output(args.output or PREDICTIONS_FILE).open("w", encoding="utf-8") as handle:
        handle.writelines(f"{p!r}\n" for p in probs.tolist())


def _latency_ns(model: Any, dataset: Dataset) -> float:
    samples = dataset.samples[:LATENCY_SAMPLES]
    if isinstance(model, ModelBundle):
        predictor = Predictor(model)
        run: Callable[[Any], float] = predictor.predict
    else:
        run = functools.partial(predict_sample, model)
    run(samples[0])
    start = time.perf_counter_ns()
    for sample in samples:
        run(sample)
    return (time.perf_counter_ns() - start) / len(samples)


def cmd_eval(ctx: RunContext, args: argparse.Namespace) -> None:
    model, model_digest = _load_model(ctx, args)
    dataset = _read_samples(ctx, args.data, model.schema, CONF_TEST)
    if len(dataset) == 0:
        raise ValidationError("cannot evaluate on an empty test set")
    loss = mean_log_loss(_probabilities(model, dataset), dataset.labels)
    relative = None
    baseline_name = None
    if args.baseline:
        baseline = EvalReport.from_json(ctx.input(args.baseline, "eval").read_text(encoding="utf-8"))
        if baseline.test_digest != dataset.digest():
            raise ValidationError("baseline report was computed on a different test set")
        relative = relative_log_loss(loss, baseline.log_loss)
        baseline_name = baseline.name
    name = args.name or ("dc" if isinstance(model, DeepCrossingModel) else model.mode)
    report = EvalReport(
        name=name,
        log_loss=loss,
        n_samples=len(dataset),
        test_digest=dataset.digest(),
        model_digest=model_digest,
        relative_log_loss=relative,
        baseline=baseline_name,
        latency_ns=_latency_ns(model, dataset) if args.latency else None,
    )
    ctx.output(f"{name}{EVAL_SUFFIX}").write_text(report.to_json(), encoding="utf-8")
    message = f"{name}: log loss {loss:.6f}"
    if relative is not None:
        message += f", relative to {baseline_name} {relative:.2f}"
    print(message)


def cmd_bench(ctx: RunContext, args: argparse.Namespace) -> None:
    model, _ = _load_model(ctx, args)
    if not isinstance(model, ModelBundle):
        raise StageDependencyError("bench needs a forest; pass --forest or --bundle")
    dataset = _read_samples(ctx, args.data, model.schema, CONF_TEST)
    config = ctx.config.bench_config()
    predictor = Predictor(model)
    reports = [bench(predictor, dataset, config, name=model.mode)]
    if args.dense:
        widths = ctx.config.section(SECTION_BENCH)[CONF_DENSE_WIDTHS]
        reference = DenseReference(widths, ctx.config.seed)
        rng = np.random.default_rng(config.shuffle_seed)
        inputs = rng.random((max(config.batch_size, 1), reference.input_dim))
        reports.append(bench_dense(reference, inputs, config))
    lines = [reports[0].csv_header()] + [r.to_csv_row() for r in reports]
    ctx.output(BENCH_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    ctx.extra["bench"] = [r.metadata for r in reports]
    for report in reports:
        print(report.summary())


def cmd_compare(ctx: RunContext, args: argparse.Namespace) -> None:
    baseline = EvalReport.from_json(ctx.input(args.baseline).read_text(encoding="utf-8"))
    candidate = EvalReport.from_json(ctx.input(args.candidate).read_text(encoding="utf-8"))
    result = compare(baseline, candidate)
    ctx.output(COMPARE_FILE).write_text(
        "baseline,candidate,relative_log_loss,latency_ratio\n" + result.csv_row + "\n",
        encoding="utf-8",
    )
    print(result.text)


COMMANDS: dict[str, Callable[[RunContext, argparse.Namespace], None]] = {
    "featurize": cmd_featurize,
    "gen-synth": cmd_gen_synth,
    "train-embed": cmd_train_embed,
    "extract-stack": cmd_extract_stack,
    "train-forest": cmd_train_forest,
    "fuzz-tune": cmd_fuzz_tune,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "compare": cmd_compare,
}


# ── Argument parsing ──────────────────────────────────────────────────


def _add_model_source(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--bundle", help="model bundle from fuzz-tune or train-forest")
    parser.add_argument("--checkpoint", help="embedding checkpoint directory")
    parser.add_argument("--forest", help="forest document (with --checkpoint)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deep-embedding-forest",
        description="Train and serve Deep Embedding Forest models.",
    )
    parser.add_argument("--seed", type=int, help="seed for every stage")
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument(
        "--deterministic",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="byte-identical artifacts (default on)",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("-q", "--quiet", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="hash raw text records into tri-letter samples")
    p.add_argument("--schema")
    p.add_argument("--input", required=True)
    p.add_argument("--output")

    p = sub.add_parser("gen-synth", help="write a synthetic schema, train and test set")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--n-test", type=int)

    p = sub.add_parser("train-embed", help="step 1: train Deep Crossing embeddings")
    p.add_argument("--schema")
    p.add_argument("--train")

    p = sub.add_parser("extract-stack", help="map samples to stacking vectors")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--output")

    p = sub.add_parser("train-forest", help="step 2: boost a forest on stacking vectors")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--stacked")
    group.add_argument("--import", dest="import_path", help="externally trained forest document")
    p.add_argument("--checkpoint", help="also write a two-step bundle")

    p = sub.add_parser("fuzz-tune", help="step 3: joint refinement of embeddings and forest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--forest", required=True)
    p.add_argument("--train")

    p = sub.add_parser("predict", help="write click probabilities")
    _add_model_source(p)
    p.add_argument("--data")
    p.add_argument("--output")

    p = sub.add_parser("eval", help="log loss on a test set")
    _add_model_source(p)
    p.add_argument("--data")
    p.add_argument("--baseline", help="eval report to compare against")
    p.add_argument("--name")
    p.add_argument("--latency", action="store_true", help="also time per-sample prediction")

    p = sub.add_parser("bench", help="per-sample T1/T2 latency")
    _add_model_source(p)
    p.add_argument("--data")
    p.add_argument("--dense", action="store_true", help="add the dense reference network")

    p = sub.add_parser("compare", help="side-by-side eval reports")
    p.add_argument("baseline")
    p.add_argument("candidate")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, dict[str, Any]]:
    overrides: dict[str, dict[str, Any]] = {
        SECTION_RUN: {
            CONF_SEED: args.seed,
            CONF_OUT: args.out,
            CONF_DETERMINISTIC: args.deterministic,
        }
    }
    if args.command == "gen-synth":
        overrides[SECTION_SYNTH] = {CONF_N_SAMPLES: args.n_samples, CONF_N_TEST: args.n_test}
    return overrides


def _configure_logging(verbose: int, quiet: int) -> None:
    level = logging.WARNING - 10 * verbose + 10 * quiet
    logging.basicConfig(
        level=max(logging.DEBUG, min(level, logging.CRITICAL)),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def run(command: str, config: RunConfig, args: argparse.Namespace, argv: Sequence[str]) -> RunContext:
    """Execute one pipeline stage and write its manifest."""
    ctx = RunContext(command, list(argv), config)
    COMMANDS[command](ctx, args)
    ctx.write_manifest()
    return ctx


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose, args.quiet)
    try:
        config = load_config(args.config, _overrides(args))
        run(args.command, config, args, argv)
    except ValidationError as err:
        _LOGGER.error("%s", err)
        return EXIT_VALIDATION
    except (DefError, OSError) as err:
        _LOGGER.error("%s failed: %s", args.command, err)
        return EXIT_RUNTIME
    return EXIT_OK
