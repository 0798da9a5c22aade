"""Command-line entry point: train, sweep, eval, predict, explain and serve."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from deep_arguing import __version__
from deep_arguing.checkpoint import TrainedModel, load_checkpoint, save_checkpoint
from deep_arguing.config import load_train_config, settings
from deep_arguing.data import load_and_preprocess, read_frame
from deep_arguing.errors import DeepArguingError, error_record
from deep_arguing.explain import DEFAULT_THRESHOLD, export_dot, export_json
from deep_arguing.trainer import multi_seed_summary, train

logger = logging.getLogger(__name__)


class ArgumentError(Exception):
    """Bad command-line usage."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(message)


def _emit(payload: dict) -> None:
    print(json.dumps(payload))


def cmd_train(args) -> int:
    config = load_train_config(args.config)
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    splits = load_and_preprocess(args.data, config.dataset_schema, config.split_config, config.seed)
    model, fullcasebase, report = train(config, splits.train, splits.val, splits.n_classes, splits.test)

    trained = TrainedModel(
        model=model,
        fullcasebase=fullcasebase,
        preprocessor=splits.preprocessor,
        schema_=config.dataset_schema.model_copy(update={"label_vocabulary": splits.label_vocabulary}),
        config=config,
        label_vocabulary=splits.label_vocabulary,
    )
    save_checkpoint(trained, args.out)
    report.write_jsonl(args.report)

    final = report.epochs[-1]
    _emit({
        "status": "success",
        "model": str(args.out),
        "report": str(args.report),
        "epochs": len(report.epochs),
        "val_macro_f1": final.val_macro_f1,
        "test_macro_f1": report.test.macro_f1 if report.test else None,
    })
    return 0


def cmd_sweep(args) -> int:
    config = load_train_config(args.config)

    def load_splits(seed: int):
        return load_and_preprocess(args.data, config.dataset_schema, config.split_config, seed)

    summaries = [multi_seed_summary(config, args.seeds, load_splits, baseline=(m == "dnn_baseline")) for m in args.models]
    for summary in summaries:
        _emit({"status": "success", **summary.model_dump()})
    if args.out:
        Path(args.out).write_text(json.dumps([s.model_dump() for s in summaries], indent=2))
        logger.info(f"Seed summary written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    trained = load_checkpoint(args.model)
    frame = read_frame(args.data, trained.schema_)
    metrics = trained.evaluate_frame(frame)
    _emit({"status": "success", "metrics": metrics.model_dump()})
    return 0


def cmd_predict(args) -> int:
    trained = load_checkpoint(args.model)
    frame = read_frame(args.rows, trained.schema_, require_label=False)
    for row, prediction in enumerate(trained.predict_frame(frame)):
        _emit({"row": row, **prediction.model_dump()})
    return 0


def cmd_explain(args) -> int:
    trained = load_checkpoint(args.model)
    frame = read_frame(args.rows, trained.schema_, require_label=False)
    subgraph = trained.explain_frame(frame, args.row, args.classes, args.threshold)
    if args.dot:
        export_dot(subgraph, args.dot)
    if args.json:
        export_json(subgraph, args.json)
    if not args.dot and not args.json:
        print(export_json(subgraph))
    else:
        _emit({
            "status": "success",
            "predicted": trained.label_vocabulary[subgraph.predicted],
            "nodes": len(subgraph.nodes),
            "edges": len(subgraph.edges),
        })
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run(
        "api.main:app",
        host=args.host or settings.api_host,
        port=args.port or settings.api_port,
        reload=settings.api_debug,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deep-arguing", description="Argumentation-based case classifier")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="Train a model from a run config and a CSV file")
    p.add_argument("config", help="Run configuration file (key=value)")
    p.add_argument("data", help="Training CSV")
    p.add_argument("--out", default="model.npz", help="Checkpoint path (default: model.npz)")
    p.add_argument("--report", default="train_report.jsonl", help="Train report path (default: train_report.jsonl)")
    p.add_argument("--seed", type=int, default=None, help="Override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="Mean and spread of test metrics over several seeds")
    p.add_argument("config", help="Run configuration file (key=value)")
    p.add_argument("data", help="Training CSV")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4], help="Seeds to run (default: 0 1 2 3 4)")
    p.add_argument(
        "--models",
        nargs="+",
        choices=["deep_arguing", "dnn_baseline"],
        default=["deep_arguing", "dnn_baseline"],
        help="Models to run (default: both)",
    )
    p.add_argument("--out", default=None, help="Write the summaries as JSON")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="Score a checkpoint on a labelled CSV")
    p.add_argument("model", help="Checkpoint path")
    p.add_argument("data", help="Labelled CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="Predict a class for every CSV row")
    p.add_argument("model", help="Checkpoint path")
    p.add_argument("rows", help="CSV of feature rows")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="Export the explanation subgraph for one row")
    p.add_argument("model", help="Checkpoint path")
    p.add_argument("rows", help="CSV of feature rows")
    p.add_argument("--row", type=int, default=0, help="0-based row to explain (default: 0)")
    p.add_argument("--classes", nargs="+", default=None, help="Class labels to keep (default: all)")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="Edge magnitude threshold (default: 0.25)")
    p.add_argument("--dot", default=None, help="Write a GraphViz DOT file")
    p.add_argument("--json", default=None, help="Write a JSON file")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("serve", help="Serve a checkpoint over HTTP")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=settings.log_level)
    try:
        args = build_parser().parse_args(argv)
    except ArgumentError as e:
        print(json.dumps(error_record(e)), file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (DeepArguingError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(json.dumps(error_record(e)), file=sys.stderr)
        return 1
