"""Command line entry point.

Subcommands: synth, train, sweep, probe, rank-eval, serve, report.
Configuration comes from --config JSON plus --set overrides; every
written artifact embeds the resolved config hash, the seed, and the
format version. Config errors exit 2, runtime failures exit 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from congater import data as data_mod
from congater import evaluation, report, training
from congater.checkpoint import quantize_model, save_checkpoint
from congater.config import ConfigError, RunConfig, load_config
from congater.encoder import EncoderModel
from congater.evaluation import check_grid, omega_sweep

logger = logging.getLogger(__name__)


def _parse_grid(text: str) -> list[float]:
    try:
        return check_grid([float(part) for part in text.split(",") if part.strip()])
    except ValueError as err:
        raise ConfigError(f"--omega-grid: {err}") from None


def _grid(args, run: RunConfig) -> list[float]:
    if args.omega_grid:
        return _parse_grid(args.omega_grid)
    return check_grid(run["evaluation"]["omega_grid"])


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _stamped(run: RunConfig, payload: dict) -> dict:
    return run.stamp() | payload


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    run = load_config(args.config, args.set)
    out = Path(args.out or "data")
    out.mkdir(parents=True, exist_ok=True)
    synth_cfg = run.synth_config()
    data_mod.save_wordlists(out / "wordlists", data_mod.wordlists(synth_cfg))
    mode = run["data"]["mode"]
    if mode == "ranking":
        train_q, val_q, test_q, background = data_mod.gen_retrieval(synth_cfg)
        counts = {"train": len(train_q), "val": len(val_q), "test": len(test_q),
                  "background": len(background)}
        data_mod.save_jsonl(out / "train.jsonl", train_q)
        data_mod.save_jsonl(out / "val.jsonl", val_q)
        data_mod.save_jsonl(out / "test.jsonl", test_q)
        data_mod.save_background(out / "background.jsonl", background)
    else:
        train_set, val_set, test_set = data_mod.gen_classification(synth_cfg)
        counts = {"train": len(train_set), "val": len(val_set),
                  "test": len(test_set)}
        data_mod.save_jsonl(out / "train.jsonl", train_set)
        data_mod.save_jsonl(out / "val.jsonl", val_set)
        data_mod.save_jsonl(out / "test.jsonl", test_set)
    meta = _stamped(run, {"mode": mode, "counts": counts})
    _write_json(out / "meta.json", meta)
    if args.json:
        print(json.dumps(meta))
    else:
        logger.info("wrote %s: %s", out, counts)
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    run = load_config(args.config, args.set)
    out = Path(args.out or "model")
    out.mkdir(parents=True, exist_ok=True)
    mode = run["data"]["mode"]
    task = "ranking" if mode == "ranking" else "classification"
    synth_cfg = run.synth_config()
    model = EncoderModel(run.encoder_config())
    if task == "classification":
        train_set, val_set, _ = data_mod.gen_classification(synth_cfg)
        if run["data"]["upsample"]:
            for attribute in run["data"]["attributes"]:
                train_set = data_mod.balance_upsample(train_set, attribute)
        log = training.train(model, train_set, run.train_config(), run.loss_config())
        data_mod.save_jsonl(out / "probe_train.jsonl", train_set)
        data_mod.save_jsonl(out / "eval.jsonl", val_set)
    else:
        train_q, val_q, _, background = data_mod.gen_retrieval(synth_cfg)
        log = training.train(model, train_q, run.train_config(), run.loss_config())
        data_mod.save_jsonl(out / "queries.jsonl", val_q)
        data_mod.save_background(out / "background.jsonl", background)
    data_mod.save_wordlists(out / "wordlists", data_mod.wordlists(synth_cfg))
    quantize_model(model)
    model.provenance = _stamped(run, {"task": task})
    save_checkpoint(model, out / "model.ckpt")
    _write_json(out / "config.json", _stamped(run, {"config": run.resolved}))
    _write_json(out / "run_log.json", _stamped(run, log.to_dict()))
    if args.json:
        print(json.dumps(_stamped(run, {"bundle": str(out),
                                        "records": len(log.records)})))
    else:
        logger.info("trained %d records -> %s", len(log.records), out)
    return 0


# ---------------------------------------------------------------------------
# evaluation commands over a trained bundle


def _load_bundle(path: str):
    from congater import service
    directory = Path(path)
    if not (directory / "model.ckpt").exists():
        raise FileNotFoundError(f"{directory} has no model.ckpt")
    return service.load_bundle(directory)


def cmd_sweep(args) -> int:
    run = load_config(args.config, args.set)
    grid = _grid(args, run)
    bundle = _load_bundle(args.bundle)
    attributes = bundle.controllable
    if not attributes:
        raise ValueError(f"model {bundle.name!r} has no controllable attributes")
    sweep = omega_sweep(bundle.model, bundle.eval_bundle(), attributes,
                        grid=grid, probe_cfg=run.probe_config(),
                        k=run["evaluation"]["k"])
    payload = _stamped(run, sweep.to_dict())
    out = Path(args.out or "sweep")
    _write_json(out.with_suffix(".json"), payload)
    stamp = run.stamp()
    comment = "# " + " ".join(f"{k}={stamp[k]}" for k in sorted(stamp)) + "\n"
    out.with_suffix(".csv").write_text(comment + sweep.to_csv())
    if args.json:
        print(json.dumps(payload))
    else:
        logger.info("wrote %s.json and %s.csv", out, out)
    return 0


def cmd_probe(args) -> int:
    run = load_config(args.config, args.set)
    grid = _grid(args, run)
    bundle = _load_bundle(args.bundle)
    if bundle.task != "classification":
        raise ValueError("probe expects a classification bundle")
    if not bundle.probe_train or not bundle.eval_examples:
        raise ValueError(f"bundle {bundle.name!r} is missing probe data")
    cfg = run.probe_config()
    rows = []
    for attribute in bundle.controllable:
        for omega in grid:
            omegas = {attribute: omega}
            z_train = bundle.model.encode(
                [ex.tokens for ex in bundle.probe_train], omegas).values
            z_eval = bundle.model.encode(
                [ex.tokens for ex in bundle.eval_examples], omegas).values
            result = evaluation.train_probes(
                z_train,
                [ex.attr_labels[attribute] for ex in bundle.probe_train],
                z_eval,
                [ex.attr_labels[attribute] for ex in bundle.eval_examples],
                cfg)
            rows.append({"attribute": attribute, "omega": omega,
                         "mean": result.mean, "std": result.std,
                         "scores": result.scores})
    payload = _stamped(run, {"rows": rows})
    if args.out:
        _write_json(Path(args.out), payload)
    if args.json or not args.out:
        print(json.dumps(payload))
    return 0


def cmd_rank_eval(args) -> int:
    run = load_config(args.config, args.set)
    grid = _grid(args, run)
    bundle = _load_bundle(args.bundle)
    if bundle.task != "ranking":
        raise ValueError("rank-eval expects a ranking bundle")
    if not bundle.queries:
        raise ValueError(f"bundle {bundle.name!r} has no queries.jsonl")
    sweep = omega_sweep(bundle.model, bundle.eval_bundle(), bundle.controllable,
                        grid=grid, k=run["evaluation"]["k"])
    report_dict = sweep.to_dict()
    rows = [{"omega": row["omega"], "mrr10": row["mrr10"],
             "nfairr10": row["nfairr10"]} for row in report_dict["rows"]]
    payload = _stamped(run, {"rows": rows})
    if args.out:
        _write_json(Path(args.out), payload)
    if args.json or not args.out:
        print(json.dumps(payload))
    return 0


# ---------------------------------------------------------------------------
# serve and report


def cmd_serve(args) -> int:
    import uvicorn

    from congater.service import create_app
    run = load_config(args.config, args.set)
    section = run["service"]
    host = args.host or section["host"]
    port = args.port if args.port is not None else section["port"]
    app = create_app(section["model_dir"], cors_origins=section["cors_origins"])
    uvicorn.run(app, host=host, port=int(port), log_level="info")
    return 0


def cmd_report(args) -> int:
    doc = json.loads(Path(args.sweep_json).read_text())
    svg = report.render_sweep_svg(doc)
    out = Path(args.out or Path(args.sweep_json).with_suffix(".svg"))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    if args.json:
        print(json.dumps({"out": str(out)}))
    else:
        logger.info("wrote %s", out)
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def _add_common(parser: argparse.ArgumentParser, out: bool = True) -> None:
    parser.add_argument("--config", help="path to a JSON config document")
    parser.add_argument("--set", action="append", default=[],
                        metavar="SECTION.KEY=VALUE",
                        help="override a config value (JSON-parsed)")
    parser.add_argument("--json", action="store_true",
                        help="print the artifact as JSON on stdout")
    if out:
        parser.add_argument("--out", help="output path or directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="congater", description="controllable attribute removal toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate synthetic datasets")
    _add_common(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train a model bundle")
    _add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="evaluate a bundle across the grid")
    p_sweep.add_argument("bundle", help="trained bundle directory")
    p_sweep.add_argument("--omega-grid", help="comma-separated grid, e.g. 0,0.5,1")
    _add_common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_probe = sub.add_parser("probe", help="train attribute probes at each omega")
    p_probe.add_argument("bundle", help="trained bundle directory")
    p_probe.add_argument("--omega-grid", help="comma-separated grid")
    _add_common(p_probe)
    p_probe.set_defaults(func=cmd_probe)

    p_rank = sub.add_parser("rank-eval", help="MRR/NFaiRR table over the grid")
    p_rank.add_argument("bundle", help="trained ranking bundle directory")
    p_rank.add_argument("--omega-grid", help="comma-separated grid")
    _add_common(p_rank)
    p_rank.set_defaults(func=cmd_rank_eval)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", help="bind address")
    p_serve.add_argument("--port", type=int, help="bind port")
    _add_common(p_serve, out=False)
    p_serve.set_defaults(func=cmd_serve)

    p_report = sub.add_parser("report", help="render a sweep JSON into SVG")
    p_report.add_argument("sweep_json", help="sweep artifact path")
    _add_common(p_report)
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
