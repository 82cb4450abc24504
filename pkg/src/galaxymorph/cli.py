"""Command-line entry point: ``galaxymorph {ingest,synth,train,search}``.

Every command reads an optional JSON run configuration (``--config``) and
accepts a few override flags.  Outputs are JSON reports and CSV data
series; nothing is rendered.  Errors print one line to stderr:

    galaxymorph: error: <ErrorType>: <message>
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import knn as knn_mod
from . import mlp as mlp_mod
from .dataset import (
    DEFAULT_FEATURE_COLUMNS,
    Schema,
    SplitSpec,
    apply_standardization,
    axis_centers,
    class_distribution,
    fit_standardization,
    generate_synthetic,
    parse_csv,
    split,
    write_csv,
)
from .errors import GalaxyMorphError, TrainingError
from .evaluation import EvalReport, ModelResult, compare_models, permutation_importance

FORMAT_VERSION = 1
PROG = "galaxymorph"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_TRAINING = 3


class ConfigError(GalaxyMorphError, ValueError):
    pass


@dataclass
class KnnOptions:
    k: int = 5
    k_values: list[int] = field(default_factory=lambda: list(range(1, 31)))
    holdout_fraction: float = 0.25


@dataclass
class MlpOptions:
    hidden_dims: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "relu"
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    l2: float = 0.0
    epochs: int = 50
    batch_size: int = 32


@dataclass
class SearchOptions:
    draws: int = 4
    folds: int = 3
    hidden_widths: list[int] = field(default_factory=lambda: [16, 32, 64])
    activations: list[str] = field(default_factory=lambda: ["relu", "tanh", "sigmoid"])
    optimizers: list[str] = field(default_factory=lambda: ["adam", "sgd"])
    epochs: int = 20


@dataclass
class RunConfig:
    input: str | None = None
    schema: str | dict | None = None
    model: str = "both"
    train_fraction: float = 0.7
    seed: int = 17
    standardize: bool = True
    knn: KnnOptions = field(default_factory=KnnOptions)
    mlp: MlpOptions = field(default_factory=MlpOptions)
    search: SearchOptions = field(default_factory=SearchOptions)
    importance_repeats: int = 5
    out: str = "out"
    fill_missing_label: int | None = None
    mse_selection: bool = False

    def __post_init__(self):
        if self.model not in ("knn", "mlp", "both"):
            raise ConfigError(f"model must be knn, mlp or both, got {self.model!r}")

    @property
    def models(self) -> list[str]:
        return ["knn", "mlp"] if self.model == "both" else [self.model]

    def load_schema(self) -> Schema:
        if self.schema is None:
            schema = Schema()
        elif isinstance(self.schema, Mapping):
            schema = Schema.from_dict(self.schema)
        else:
            schema = Schema.from_json(self.schema)
        if self.fill_missing_label is not None:
            schema = replace(schema, fill_missing_label=self.fill_missing_label)
        return schema


_SECTIONS = {"knn": KnnOptions, "mlp": MlpOptions, "search": SearchOptions}


def _build(cls, data: Mapping, where: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return cls(**data)


def load_config(path: str | None) -> RunConfig:
    """Parse a JSON run config; relative paths resolve against its folder."""
    if path is None:
        return RunConfig()
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    base = Path(path).parent
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    for key in ("input", "schema", "out"):
        value = kwargs.get(key)
        if isinstance(value, str) and not Path(value).is_absolute():
            kwargs[key] = str(base / value)
    return _build(RunConfig, kwargs, "config")


def _parse_grid(text: str) -> list[int]:
    """``"1:10"`` (inclusive) or ``"1,3,5"``."""
    try:
        if ":" in text:
            lo, hi = text.split(":")
            return list(range(int(lo), int(hi) + 1))
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k grid {text!r}") from None


def apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "input", None):
        config.input = args.input
    if getattr(args, "schema", None):
        config.schema = args.schema
    if getattr(args, "model", None):
        config.model = args.model
        config.__post_init__()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "k", None) is not None:
        config.knn.k = args.k
    if getattr(args, "k_grid", None) is not None:
        config.knn.k_values = args.k_grid
    if getattr(args, "epochs", None) is not None:
        config.mlp.epochs = args.epochs
        config.search.epochs = args.epochs
    if getattr(args, "draws", None) is not None:
        config.search.draws = args.draws
    if getattr(args, "folds", None) is not None:
        config.search.folds = args.folds
    if getattr(args, "out", None):
        config.out = args.out
    if getattr(args, "fill_missing_label", None) is not None:
        config.fill_missing_label = args.fill_missing_label
    if getattr(args, "mse_selection", False):
        config.mse_selection = True
    return config


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ingest(config: RunConfig):
    if not config.input:
        raise ConfigError("no input file given (set 'input' or pass --input)")
    schema = config.load_schema()
    dataset, report = parse_csv(config.input, schema)
    return schema, dataset, report


def _leakage_warnings(schema: Schema) -> list[str]:
    leaky = schema.leaky_features()
    if not leaky:
        return []
    return [
        "label leakage: features "
        + ", ".join(leaky)
        + " are vote fractions from which the morphology flags are thresholded;"
        " accuracy on this table largely measures that leakage"
    ]


def cmd_ingest(config: RunConfig) -> dict:
    schema, dataset, report = _ingest(config)
    out = _out_dir(config)
    _write_json(out / "ingest_report.json", report.to_dict())
    counts = class_distribution(dataset, schema.num_classes)
    _write_csv(out / "class_distribution.csv", ["class", "count"], [(c, int(n)) for c, n in enumerate(counts)])
    return report.to_dict()


def cmd_synth(n: int, spread: float, seed: int, out_path: str, separation: float | None = None) -> Path:
    """Gaussian blobs written in the default ingestion schema.

    Centres sit on the first three coordinate axes, ``separation``
    (default ``10 * spread``) apart; flags are set from the generating class.
    """
    separation = 10.0 * spread if separation is None else separation
    centers = axis_centers(separation, len(DEFAULT_FEATURE_COLUMNS))
    dataset = generate_synthetic(n, centers, spread, seed, DEFAULT_FEATURE_COLUMNS)
    path = Path(out_path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(dataset, path, Schema())
    return path


def _prepare(config: RunConfig):
    schema, dataset, report = _ingest(config)
    train_set, test_set = split(dataset, SplitSpec(config.train_fraction, config.seed))
    stats = None
    if config.standardize:
        stats = fit_standardization(train_set.features)
        train_set = apply_standardization(train_set, stats)
        test_set = apply_standardization(test_set, stats)
    return schema, report, train_set, test_set, stats


def _mlp_parts(config: RunConfig, d: int, q: int) -> tuple[mlp_mod.MlpArchitecture, mlp_mod.TrainConfig]:
    o = config.mlp
    arch = mlp_mod.MlpArchitecture(d, tuple(o.hidden_dims), q, o.activation)
    tc = mlp_mod.TrainConfig(
        optimizer=o.optimizer,
        learning_rate=o.learning_rate,
        l2=o.l2,
        epochs=o.epochs,
        batch_size=o.batch_size,
        seed=config.seed,
    )
    return arch, tc


def cmd_train(config: RunConfig) -> dict:
    schema, report, train_set, test_set, stats = _prepare(config)
    out = _out_dir(config)
    q = schema.num_classes
    warnings = _leakage_warnings(schema)
    models_json: dict[str, dict] = {}
    evals: dict[str, dict] = {}
    results: list[ModelResult] = []
    confusion_rows = []

    for name in config.models:
        if name == "knn":
            model = knn_mod.fit(train_set, config.knn.k)
            predict = model.predict
            train_acc = float(np.mean(model.predict(train_set.features) == train_set.labels))
            grid = knn_mod.grid_search_k(
                train_set,
                knn_mod.GridSearchSpec(tuple(config.knn.k_values), config.knn.holdout_fraction, config.seed),
            )
            warnings.extend(grid.warnings)
            _write_csv(
                out / "knn_grid.csv",
                ["k", "accuracy"],
                [(c["params"]["k"], c["score"]) for c in grid.candidates],
            )
            best = grid.best_score
            models_json["knn"] = model.summary()
            extra = {"grid_best_k": grid.best_params["k"]}
        else:
            arch, tc = _mlp_parts(config, train_set.n_features, q)
            model, history = mlp_mod.train(train_set, arch, tc, validation=test_set)
            predict = model.predict
            train_acc = history.accuracy[-1]
            best = None
            rows = history.rows()
            header = list(rows[0].keys())
            _write_csv(out / "mlp_history.csv", header, [[r[h] for h in header] for r in rows])
            models_json["mlp"] = model.to_dict()
            extra = {"initial_loss": history.initial_loss, "final_loss": history.loss[-1]}

        test_report = EvalReport.from_predictions(predict(test_set.features), test_set.labels, q)
        result = ModelResult(name, test_report, train_acc, best)
        results.append(result)
        entry = result.to_dict()
        entry.update(extra)
        if config.importance_repeats > 0:
            entry["importance"] = permutation_importance(
                predict, test_set, config.importance_repeats, config.seed
            ).to_dict()
        evals[name] = entry
        for actual, row in enumerate(test_report.confusion.tolist()):
            confusion_rows.append([name, actual, *row])

    model_doc = {
        "format_version": FORMAT_VERSION,
        "standardization": None if stats is None else stats.to_dict(),
        "feature_names": list(train_set.feature_names),
        "models": models_json,
    }
    _write_json(out / "model.json", model_doc)
    eval_doc = {
        "format_version": FORMAT_VERSION,
        "split": {"train_fraction": config.train_fraction, "seed": config.seed,
                  "n_train": len(train_set), "n_test": len(test_set)},
        "ingest": report.to_dict(),
        "models": evals,
        "warnings": warnings,
    }
    _write_json(out / "eval.json", eval_doc)
    _write_csv(
        out / "confusion.csv",
        ["model", "actual", *[f"pred_{j}" for j in range(q)]],
        confusion_rows,
    )
    if len(results) > 1:
        _write_json(out / "comparison.json", compare_models(results, warnings).to_dict())
    return eval_doc


def cmd_search(config: RunConfig) -> dict:
    schema, _, train_set, _, _ = _prepare(config)
    out = _out_dir(config)
    rows, best_doc, fold_rows = [], {}, []
    for name in config.models:
        if name == "knn":
            if not config.knn.k_values:
                raise ConfigError("empty k grid")
            result = knn_mod.grid_search_k(
                train_set,
                knn_mod.GridSearchSpec(tuple(config.knn.k_values), config.knn.holdout_fraction, config.seed),
            )
        else:
            s = config.search
            if not (s.hidden_widths and s.activations and s.optimizers):
                raise ConfigError("empty MLP search space")
            _, base = _mlp_parts(config, train_set.n_features, schema.num_classes)
            spec = mlp_mod.RandomSearchSpec(
                draws=s.draws,
                folds=s.folds,
                space=mlp_mod.SearchSpace(tuple(s.hidden_widths), tuple(s.activations), tuple(s.optimizers)),
                selection_metric="mse" if config.mse_selection else "accuracy",
                seed=config.seed,
                base_config=replace(base, epochs=s.epochs),
            )
            result = mlp_mod.randomized_search(train_set, spec, schema.num_classes)
            fold_rows += [(name, r["candidate"], r["fold"], r["seed"], r["score"]) for r in result.fold_runs]
        for i, c in enumerate(result.candidates):
            rows.append((name, i, json.dumps(c["params"], sort_keys=True), c["score"]))
        best_doc[name] = {
            "metric": result.metric,
            "higher_is_better": result.higher_is_better,
            "params": result.best_params,
            "score": result.best_score,
            "warnings": result.warnings,
        }
    _write_csv(out / "search.csv", ["model", "candidate", "params", "score"], rows)
    if fold_rows:
        _write_csv(out / "search_folds.csv", ["model", "candidate", "fold", "seed", "score"], fold_rows)
    doc = {"format_version": FORMAT_VERSION, "best": best_doc}
    _write_json(out / "best.json", doc)
    return doc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="Galaxy morphology classification (KNN and MLP).")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--input", help="input CSV (overrides config)")
        p.add_argument("--schema", help="JSON column mapping (overrides config)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--fill-missing-label", type=int, choices=[3],
                       help="compat: map rows without a flag to a fourth class 3")

    p_ingest = sub.add_parser("ingest", help="parse input, write ingestion report and class distribution")
    common(p_ingest)

    for name, help_text in (("train", "fit models and write evaluation reports"),
                            ("search", "hyperparameter search")):
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.add_argument("--model", choices=["knn", "mlp", "both"])
        p.add_argument("--k", type=int, help="KNN neighbour count")
        p.add_argument("--k-grid", type=_parse_grid, help="KNN grid, e.g. 1:30 or 1,3,5")
        p.add_argument("--epochs", type=int)
        if name == "search":
            p.add_argument("--draws", type=int)
            p.add_argument("--folds", type=int)
            p.add_argument("--mse-selection", action="store_true",
                           help="compat: select MLP candidates by MSE on one-hot targets")

    p_synth = sub.add_parser("synth", help="write a synthetic Gaussian-blob dataset")
    p_synth.add_argument("--n", type=int, default=6000)
    p_synth.add_argument("--spread", type=float, default=1.0)
    p_synth.add_argument("--separation", type=float, help="pairwise centre distance (default 10*spread)")
    p_synth.add_argument("--seed", type=int, default=17)
    p_synth.add_argument("--out", required=True, help="output CSV path")
    return parser


def _fail(exc: BaseException, code: int) -> int:
    message = " ".join(str(exc).split())
    print(f"{PROG}: error: {type(exc).__name__}: {message}", file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            path = cmd_synth(args.n, args.spread, args.seed, args.out, args.separation)
            print(path)
            return EXIT_OK
        config = apply_overrides(load_config(args.config), args)
        if args.command == "ingest":
            report = cmd_ingest(config)
            print(json.dumps({k: report[k] for k in ("rows_read", "rows_rejected", "class_counts")}))
        elif args.command == "train":
            doc = cmd_train(config)
            for name, entry in doc["models"].items():
                print(f"{name}: train={entry['train_accuracy']:.4f} test={entry['test_accuracy']:.4f}")
        else:
            doc = cmd_search(config)
            for name, best in doc["best"].items():
                print(f"{name}: best {best['metric']}={best['score']:.4f} params={json.dumps(best['params'])}")
    except TrainingError as exc:
        return _fail(exc, EXIT_TRAINING)
    except (GalaxyMorphError, ValueError, OSError, KeyError, TypeError) as exc:
        return _fail(exc, EXIT_INPUT)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
