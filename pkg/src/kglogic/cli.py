"""Batch front-end: each subcommand is a thin deterministic wrapper over
one module operation, writing its artifacts plus the fully-resolved config
(with content hashes of every input) into the run directory."""

from __future__ import annotations

import functools
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import backends, cqd, evaluation, kg, messages, network, pretrain
from .errors import (
    CapacityError,
    ConfigError,
    KgLogicError,
    NumericError,
    OptimizationError,
    ParseError,
    ProtocolError,
    SamplingError,
    StructureError,
    TrainingError,
    VerificationError,
)
from .queries import CATALOG, parse_query, serialize_query
from .sampling import sample_instances
from .training import TrainConfig, train_lmpnn

_ERROR_CODES = [
    (ParseError, "PARSE_ERROR"),
    (ConfigError, "CONFIG_ERROR"),
    (StructureError, "STRUCTURE_ERROR"),
    (CapacityError, "CAPACITY_ERROR"),
    (SamplingError, "SAMPLING_ERROR"),
    (TrainingError, "TRAINING_ERROR"),
    (VerificationError, "VERIFICATION_ERROR"),
    (ProtocolError, "PROTOCOL_ERROR"),
    (NumericError, "NUMERIC_ERROR"),
    (OptimizationError, "OPTIMIZATION_ERROR"),
    (KgLogicError, "TOOLKIT_ERROR"),
    (FileNotFoundError, "MISSING_INPUT"),
    (LookupError, "LOOKUP_ERROR"),
    (ValueError, "INVALID_ARGUMENT"),
]


def _error_code(exc: BaseException) -> str:
    for klass, code in _ERROR_CODES:
        if isinstance(exc, klass):
            return code
    return "INTERNAL_ERROR"


def _cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except Exception as exc:
            click.echo(f"{_error_code(exc)}: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _resolve(ctx: click.Context, config_path, flag_names) -> dict:
    """Config file values override defaults; explicit flags override both.
    Unknown config keys are rejected."""
    resolved = {name: ctx.params[name] for name in flag_names}
    if config_path:
        try:
            file_cfg = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: invalid config JSON: {exc}") from None
        unknown = set(file_cfg) - set(flag_names)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in file_cfg.items():
            resolved[key] = value
    for name in flag_names:
        src = ctx.get_parameter_source(name)
        if src is not None and src.name == "COMMANDLINE":
            resolved[name] = ctx.params[name]
    return resolved


def _log_run(out_dir: Path, command: str, resolved: dict, inputs: dict) -> None:
    expanded = {}
    for name, p in inputs.items():
        p = Path(p)
        expanded[name] = p
        # Checkpoint headers reference a binary blob; hash it too.
        if p.suffix == ".json" and p.with_suffix(".bin").exists():
            expanded[f"{name}_blob"] = p.with_suffix(".bin")
    payload = {
        "command": command,
        "config": resolved,
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)}
                   for name, p in expanded.items()},
    }
    (out_dir / "resolved_config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _out_dir(out) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _read_instance_dir(queries_dir: Path):
    files = sorted(Path(queries_dir).glob("*.jsonl"))
    if not files:
        raise ParseError(f"no .jsonl query files under {queries_dir}")
    instances = []
    for path in files:
        with path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    instances.append(parse_query(line))
                except ParseError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from None
    return instances


@click.group()
def main():
    """Logical query answering toolkit over knowledge-graph embeddings."""


@main.command("kg-gen")
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--entities", default=50, show_default=True)
@click.option("--relations", default=5, show_default=True)
@click.option("--triples", default=500, show_default=True)
@click.option("--dropout", default=0.1, show_default=True)
@click.option("--seed", required=True, type=int)
@click.pass_context
@_cli_errors
def kg_gen(ctx, out, config_path, **_):
    """Generate a synthetic observed/full split."""
    cfg = _resolve(ctx, config_path,
                   ["entities", "relations", "triples", "dropout", "seed"])
    out_dir = _out_dir(out)
    split = kg.generate_synthetic(
        kg.SyntheticConfig(entity_count=cfg["entities"],
                           relation_count=cfg["relations"],
                           triple_count=cfg["triples"],
                           dropout_fraction=cfg["dropout"]),
        seed=cfg["seed"])
    manifest = kg.save_dataset(split, out_dir)
    _log_run(out_dir, "kg-gen", cfg, {})
    click.echo(f"wrote {manifest} ({len(split.observed)} observed / "
               f"{len(split.full)} full triples)")


@main.command("kge-train")
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data", required=True, type=click.Path(exists=True),
              help="Path to the split manifest (split.json).")
@click.option("--kind", default="complex", show_default=True,
              type=click.Choice(backends.KINDS))
@click.option("--dim", default=64, show_default=True)
@click.option("--gamma", default=9.0, show_default=True)
@click.option("--reg-weight", default=0.001, show_default=True)
@click.option("--reg-power", default=None, type=int)
@click.option("--lr", default=0.05, show_default=True)
@click.option("--batch-size", default=256, show_default=True)
@click.option("--negatives", default=16, show_default=True)
@click.option("--epochs", default=200, show_default=True)
@click.option("--seed", required=True, type=int)
@click.pass_context
@_cli_errors
def kge_train(ctx, out, config_path, data, **_):
    """Pretrain embeddings on the observed graph."""
    cfg = _resolve(ctx, config_path,
                   ["kind", "dim", "gamma", "reg_weight", "reg_power", "lr",
                    "batch_size", "negatives", "epochs", "seed"])
    out_dir = _out_dir(out)
    split = kg.load_dataset(data)
    backend = backends.Backend(kind=cfg["kind"], dim=cfg["dim"],
                               gamma=cfg["gamma"],
                               reg_weight=cfg["reg_weight"],
                               reg_power=cfg["reg_power"])
    hyper = pretrain.TrainHyper(lr=cfg["lr"], batch_size=cfg["batch_size"],
                                negatives_per_positive=cfg["negatives"],
                                epochs=cfg["epochs"], seed=cfg["seed"])
    table = pretrain.train_embeddings(split, backend, hyper)
    header = backends.save_checkpoint(table, out_dir / "kge.json")
    mrr = pretrain.link_prediction_mrr(table, split.observed)
    (out_dir / "metrics.json").write_text(
        json.dumps({"train_mrr": mrr}, sort_keys=True) + "\n", encoding="utf-8")
    _log_run(out_dir, "kge-train", cfg, {"data": Path(data)})
    click.echo(f"wrote {header} (train MRR {mrr:.4f})")


@main.command("query-sample")
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--types", default="all", show_default=True,
              help="Comma-separated type names, or 'all'.")
@click.option("--count", default=30, show_default=True)
@click.option("--seed", required=True, type=int)
@click.pass_context
@_cli_errors
def query_sample(ctx, out, config_path, data, **_):
    """Sample grounded query instances with easy/hard answer splits."""
    cfg = _resolve(ctx, config_path, ["types", "count", "seed"])
    out_dir = _out_dir(out)
    split = kg.load_dataset(data)
    names = CATALOG if cfg["types"] == "all" else tuple(
        t.strip() for t in cfg["types"].split(","))
    queries_dir = out_dir / "queries"
    queries_dir.mkdir(exist_ok=True)
    total = 0
    for name in names:
        instances = sample_instances(split, name, cfg["count"], cfg["seed"])
        with (queries_dir / f"{name}.jsonl").open("w", encoding="utf-8") as fh:
            for inst in instances:
                fh.write(serialize_query(inst) + "\n")
        total += len(instances)
    _log_run(out_dir, "query-sample", cfg, {"data": Path(data)})
    click.echo(f"wrote {total} instances under {queries_dir}")


@main.command("lmpnn-train")
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--queries", "queries_dir", required=True,
              type=click.Path(exists=True))
@click.option("--hidden", default=512, show_default=True)
@click.option("--epsilon", default=0.1, show_default=True)
@click.option("--temperature", default=0.05, show_default=True)
@click.option("--negatives", default=16, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--weight-decay", default=1e-4, show_default=True)
@click.option("--batch-size", default=128, show_default=True)
@click.option("--epochs", default=50, show_default=True)
@click.option("--message-mode", default="closed_form", show_default=True,
              type=click.Choice(network.MESSAGE_MODES))
@click.option("--seed", required=True, type=int)
@click.pass_context
@_cli_errors
def lmpnn_train(ctx, out, config_path, checkpoint, queries_dir, **_):
    """Train the message-passing network on sampled instances."""
    cfg = _resolve(ctx, config_path,
                   ["hidden", "epsilon", "temperature", "negatives", "lr",
                    "weight_decay", "batch_size", "epochs", "message_mode",
                    "seed"])
    out_dir = _out_dir(out)
    table = backends.load_checkpoint(checkpoint)
    instances = _read_instance_dir(queries_dir)
    params0 = network.init_params(
        table.backend.dim, cfg["hidden"], cfg["epsilon"], cfg["seed"],
        message_mode=cfg["message_mode"],
        relation_size=table.backend.relation_size)
    train_cfg = TrainConfig(temperature=cfg["temperature"],
                            negatives=cfg["negatives"], lr=cfg["lr"],
                            weight_decay=cfg["weight_decay"],
                            batch_size=cfg["batch_size"],
                            epochs=cfg["epochs"], seed=cfg["seed"])
    telemetry = out_dir / "train_log.jsonl"
    telemetry.unlink(missing_ok=True)
    params, history = train_lmpnn(table, instances, train_cfg, params0,
                                  telemetry_path=telemetry)
    header = network.save_params(params, out_dir / "lmpnn.json",
                                 backend_kind=table.backend.kind)
    _log_run(out_dir, "lmpnn-train", cfg, {"checkpoint": Path(checkpoint)})
    first = history[0]["mean_loss"] if history else None
    last = history[-1]["mean_loss"] if history else None
    click.echo(f"wrote {header} (loss {first} -> {last})")


def _evaluate_to_dir(out_dir: Path, instances, rank_fn, strict=False):
    usable = [inst for inst in instances if inst.hard]
    cache = {}
    queries = [inst.query for inst in usable]
    for inst, ranking in zip(usable, rank_fn(queries)):
        cache[id(inst.query)] = ranking
    report = evaluation.evaluate(usable, lambda q: cache[id(q)], strict=strict)
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out_dir / "report.txt").write_text(evaluation.format_report(report),
                                        encoding="utf-8")
    return report


@main.command("evaluate")
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--lmpnn", "lmpnn_path", required=True, type=click.Path(exists=True))
@click.option("--queries", "queries_dir", required=True,
              type=click.Path(exists=True))
@click.option("--depth-offset", default=0, show_default=True)
@click.option("--join", default="max_score", show_default=True,
              type=click.Choice(network.JOIN_MODES))
@click.option("--strict-filtering", is_flag=True, default=False,
              help="Filter easy answers only, keeping other hard answers.")
@click.pass_context
@_cli_errors
def evaluate_cmd(ctx, out, config_path, checkpoint, lmpnn_path, queries_dir, **_):
    """Filtered-MRR evaluation of a trained network."""
    cfg = _resolve(ctx, config_path, ["depth_offset", "join", "strict_filtering"])
    out_dir = _out_dir(out)
    table = backends.load_checkpoint(checkpoint)
    params = network.load_params(lmpnn_path)
    instances = _read_instance_dir(queries_dir)

    def rank_fn(queries):
        return network.rank_queries(queries, table, params,
                                    depth_offset=cfg["depth_offset"],
                                    join=cfg["join"])

    report = _evaluate_to_dir(out_dir, instances, rank_fn,
                              strict=cfg["strict_filtering"])
    _log_run(out_dir, "evaluate", cfg,
             {"checkpoint": Path(checkpoint), "lmpnn": Path(lmpnn_path)})
    click.echo(evaluation.format_report(report).rstrip())


@main.command("cqd-eval")
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--queries", "queries_dir", required=True,
              type=click.Path(exists=True))
@click.option("--tnorm", default="product", show_default=True,
              type=click.Choice(cqd.TNORMS))
@click.option("--steps", default=200, show_default=True)
@click.option("--lr", default=0.1, show_default=True)
@click.option("--restarts", default=4, show_default=True)
@click.option("--init-scale", default=0.1, show_default=True)
@click.option("--strict-filtering", is_flag=True, default=False)
@click.option("--seed", required=True, type=int)
@click.pass_context
@_cli_errors
def cqd_eval(ctx, out, config_path, checkpoint, queries_dir, **_):
    """Filtered-MRR evaluation of the optimization baseline."""
    cfg = _resolve(ctx, config_path,
                   ["tnorm", "steps", "lr", "restarts", "init_scale",
                    "strict_filtering", "seed"])
    out_dir = _out_dir(out)
    table = backends.load_checkpoint(checkpoint)
    instances = _read_instance_dir(queries_dir)

    def rank_fn(queries):
        return [cqd.cqd_optimize(q, table, tnorm=cfg["tnorm"],
                                 steps=cfg["steps"], lr=cfg["lr"],
                                 restarts=cfg["restarts"],
                                 init_scale=cfg["init_scale"],
                                 seed=cfg["seed"]) for q in queries]

    report = _evaluate_to_dir(out_dir, instances, rank_fn,
                              strict=cfg["strict_filtering"])
    _log_run(out_dir, "cqd-eval", cfg, {"checkpoint": Path(checkpoint)})
    click.echo(evaluation.format_report(report).rstrip())


@main.command("verify-rho")
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--backend", "backend", default="complex",
              show_default=True, type=click.Choice(backends.KINDS))
@click.option("--dim", default=16, show_default=True)
@click.option("--trials", default=20, show_default=True)
@click.option("--lam", default=1.0 / 3.0, show_default=True)
@click.option("--steps", default=1500, show_default=True)
@click.option("--seed", required=True, type=int)
@click.pass_context
@_cli_errors
def verify_rho(ctx, out, config_path, **_):
    """Closed-form messages vs the numeric argmax, on a random table."""
    cfg = _resolve(ctx, config_path,
                   ["backend", "dim", "trials", "lam", "steps", "seed"])
    out_dir = _out_dir(out)
    backend = backends.Backend(kind=cfg["backend"], dim=cfg["dim"])
    rng = np.random.default_rng(cfg["seed"])
    entity = rng.normal(size=(8, backend.dim))
    if backend.kind == "rotate":
        relation = rng.uniform(-np.pi, np.pi, size=(6, backend.relation_size))
    else:
        relation = rng.normal(size=(6, backend.relation_size))
    table = backends.EmbeddingTable(backend, entity, relation)
    gaps = []
    for trial in range(cfg["trials"]):
        mq = messages.MessageQuery(
            source=rng.normal(size=backend.dim),
            relation=int(rng.integers(table.relation_count)),
            direction="t2h" if trial % 2 else "h2t",
            negated=bool(trial % 4 // 2))
        result = messages.verify_closed_form(table, mq, lam=cfg["lam"],
                                             oracle_steps=cfg["steps"],
                                             seed=cfg["seed"] + trial)
        gaps.append(result.cosine_gap)
    payload = {"backend": backend.kind, "mean_cosine_gap": float(np.mean(gaps)),
               "max_cosine_gap": float(np.max(gaps)), "gaps": gaps}
    (out_dir / "verify.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    _log_run(out_dir, "verify-rho", cfg, {})
    click.echo(f"{backend.kind}: mean cosine gap {payload['mean_cosine_gap']:.2e} "
               f"over {cfg['trials']} trials")


@main.command("landscape")
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--grid-points", default=1001, show_default=True)
@click.pass_context
@_cli_errors
def landscape(ctx, out, config_path, **_):
    """Profile of the negated-conjunction objective over [0, 1]."""
    cfg = _resolve(ctx, config_path, ["grid_points"])
    out_dir = _out_dir(out)
    path = cqd.write_landscape_csv(out_dir / "landscape.csv",
                                   cfg["grid_points"])
    _log_run(out_dir, "landscape", cfg, {})
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
