"""Operator commands: fixtures, train, evaluate, generate, inspect, serve.

Runs are described by a TOML config with [data], [model], [optimizer] and
[run] sections; every [run] switch can be overridden on the command line.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import click

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backbone import ModelConfig
from .corpus import load_dataset, build_vocabulary, verify_ood
from .fixtures import CorpusSpec, generate_corpus
from .generator import RunOptions, build_context, generate as run_generate
from .metrics import evaluate_split
from .model import DialogueModel, load_checkpoint
from .scenario import top_biased_tokens
from .serve import create_app, keyword_panel
from .trainer import OptimizerConfig, fit

# Tuned operating points: keyword window m, soft threshold delta, decode cap.
PRESETS = {
    "durecdial": {"m": 4, "delta": 0.2, "max_tgt_len": 100},
    "durecdial2": {"m": 3, "delta": 0.2, "max_tgt_len": 80},
}


@dataclass
class RunConfig:
    data_dir: Path
    out_dir: Path
    model: ModelConfig
    optimizer: OptimizerConfig
    options: RunOptions
    min_count: int = 1


def _section(cfg: dict, name: str) -> dict:
    value = cfg.get(name, {})
    if not isinstance(value, dict):
        raise click.UsageError(f"{name}: expected a table, got {value!r}")
    return dict(value)


def load_run_config(path: Path, overrides: dict) -> RunConfig:
    try:
        cfg = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise click.UsageError(f"{path}: {exc}") from None
    data = _section(cfg, "data")
    model = _section(cfg, "model")
    optimizer = _section(cfg, "optimizer")
    run = _section(cfg, "run")

    preset = run.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise click.UsageError(
                f"run.preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        tuned = PRESETS[preset]
        run.setdefault("m", tuned["m"])
        run.setdefault("delta", tuned["delta"])
        model.setdefault("max_tgt_len", tuned["max_tgt_len"])

    for key, value in overrides.items():
        if value is not None:
            run[key] = value

    seed = run.pop("seed", 0)
    out_dir = Path(run.pop("out", "runs/default"))
    if "out" in overrides and overrides["out"] is not None:
        out_dir = Path(overrides["out"])
        run.pop("out", None)

    opt_fields = {f.name for f in dataclasses.fields(RunOptions)}
    unknown = set(run) - opt_fields
    if unknown:
        raise click.UsageError(f"run: unknown keys {sorted(unknown)}")
    try:
        options = RunOptions(**run)
    except (TypeError, ValueError) as exc:
        raise click.UsageError(f"run: {exc}") from None
    try:
        model_cfg = ModelConfig(**{"seed": seed, **model})
    except (TypeError, ValueError) as exc:
        raise click.UsageError(f"model: {exc}") from None
    try:
        optimizer_cfg = OptimizerConfig(**{"seed": seed, **optimizer})
    except (TypeError, ValueError) as exc:
        raise click.UsageError(f"optimizer: {exc}") from None
    if "dir" not in data:
        raise click.UsageError("data.dir: required")
    return RunConfig(
        data_dir=Path(data["dir"]),
        out_dir=out_dir,
        model=model_cfg,
        optimizer=optimizer_cfg,
        options=options,
        min_count=int(data.get("min_count", 1)),
    )


def _run_option_flags(fn):
    """Shared inference switches: --mode/--m/--delta/--lambda and ablations."""
    flags = [
        click.option("--mode", type=click.Choice(["hard", "soft"]), default=None),
        click.option("--m", "m", type=int, default=None,
                     help="future-turn keyword window"),
        click.option("--delta", type=float, default=None,
                     help="soft-mode probability threshold"),
        click.option("--lambda", "bias_scale", type=float, default=None,
                     help="scenario bias scale"),
        click.option("--no-csm", "no_csm", is_flag=True,
                     help="disable conversational scenario modeling"),
        click.option("--no-ikb", "no_ikb", is_flag=True,
                     help="disable intent-keyword bridging"),
        click.option("--drop-k", "drop_k", is_flag=True,
                     help="ablate knowledge pooling"),
        click.option("--drop-u", "drop_u", is_flag=True,
                     help="ablate profile pooling"),
    ]
    for flag in reversed(flags):
        fn = flag(fn)
    return fn


def _collect_overrides(mode, m, delta, bias_scale, no_csm, no_ikb, drop_k, drop_u):
    overrides: dict = {"mode": mode, "m": m, "delta": delta, "bias_scale": bias_scale}
    if no_csm:
        overrides["use_csm"] = False
    if no_ikb:
        overrides["use_ikb"] = False
    if drop_k:
        overrides["drop_k"] = True
    if drop_u:
        overrides["drop_u"] = True
    return overrides


def _options_from_flags(base: RunOptions, overrides: dict) -> RunOptions:
    updates = {k: v for k, v in overrides.items() if v is not None}
    try:
        return dataclasses.replace(base, **updates)
    except ValueError as exc:
        raise click.UsageError(f"run: {exc}") from None


def _load_eval_inputs(checkpoint: Path, data_dir: Path):
    model, vocab, inventory = load_checkpoint(checkpoint)
    dataset = load_dataset(data_dir, inventory=inventory)
    return model, vocab, dataset


@click.group()
def main() -> None:
    """Target-guided dialogue: scenario bias + intent-keyword bridging."""


@main.command()
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--topics", type=int, default=12)
@click.option("--ood-topics", type=int, default=3)
@click.option("--train", "n_train", type=int, default=8)
@click.option("--dev", "n_dev", type=int, default=2)
@click.option("--test-id", "n_test_id", type=int, default=2)
@click.option("--test-ood", "n_test_ood", type=int, default=2)
@click.option("--distractors", type=int, default=1)
def fixtures(out, seed, topics, ood_topics, n_train, n_dev, n_test_id, n_test_ood,
             distractors) -> None:
    """Generate a synthetic format-compatible corpus."""
    spec = CorpusSpec(n_topics=topics, n_ood_topics=ood_topics, n_train=n_train,
                      n_dev=n_dev, n_test_id=n_test_id, n_test_ood=n_test_ood,
                      n_distractors=distractors, seed=seed)
    inventory = generate_corpus(spec, out)
    click.echo(f"wrote corpus to {out} "
               f"({inventory.n_types} keyword-types, {inventory.n_topics} topics)")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@_run_option_flags
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(path_type=Path), default=None)
def train(config_path, mode, m, delta, bias_scale, no_csm, no_ikb, drop_k, drop_u,
          seed, out) -> None:
    """Train a model from a TOML run config."""
    overrides = _collect_overrides(mode, m, delta, bias_scale, no_csm, no_ikb,
                                   drop_k, drop_u)
    overrides["out"] = str(out) if out else None
    if seed is not None:
        overrides["seed"] = seed
    cfg = load_run_config(config_path, overrides)

    dataset = load_dataset(cfg.data_dir)
    vocab = build_vocabulary(dataset.train, min_count=cfg.min_count)
    model_cfg = dataclasses.replace(cfg.model, vocab_size=vocab.size)
    model = DialogueModel(model_cfg, dataset.inventory.n_types,
                          dataset.inventory.n_topics)
    click.echo(f"training: vocab={vocab.size} types={model.n_types} "
               f"topics={model.n_topics} params={sum(p.numel() for p in model.parameters())}")
    result = fit(dataset, model, vocab, cfg.optimizer, cfg.options, cfg.out_dir)
    click.echo(f"checkpoint: {result.checkpoint}")
    dev_report = cfg.out_dir / "dev_report.json"
    if dev_report.exists():
        click.echo(dev_report.read_text())


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--split", type=click.Choice(["dev", "test_id", "test_ood"]),
              default="dev")
@_run_option_flags
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="report path (.json); a .txt table lands next to it")
def evaluate(checkpoint, data_dir, split, mode, m, delta, bias_scale, no_csm, no_ikb,
             drop_k, drop_u, out) -> None:
    """Evaluate a checkpoint on one split."""
    model, vocab, dataset = _load_eval_inputs(checkpoint, data_dir)
    if split == "test_ood":
        ok, offenders = verify_ood(dataset)
        if not ok:
            raise click.UsageError(
                f"test_ood split fails the OOD check; offending topics: {offenders}")
    options = _options_from_flags(
        RunOptions(), _collect_overrides(mode, m, delta, bias_scale, no_csm, no_ikb,
                                         drop_k, drop_u))
    samples = dataset.split(split)
    if not samples:
        raise click.UsageError(f"split {split} is empty")
    report = evaluate_split(samples, model, vocab, dataset, options, split_name=split)
    out = out or Path(f"report_{split}.json")
    report.save(out)
    Path(out).with_suffix(".txt").write_text(report.format_table() + "\n")
    click.echo(report.format_table())


@main.command(name="generate")
@click.option("--checkpoint", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--split", type=click.Choice(["train", "dev", "test_id", "test_ood"]),
              default="dev")
@click.option("--index", type=int, default=0)
@_run_option_flags
@click.option("--trace", is_flag=True, help="emit per-step JSONL to stderr")
def generate_cmd(checkpoint, data_dir, split, index, mode, m, delta, bias_scale,
                 no_csm, no_ikb, drop_k, drop_u, trace) -> None:
    """Generate the system utterance for one sample."""
    from .corpus import encode_sample

    model, vocab, dataset = _load_eval_inputs(checkpoint, data_dir)
    samples = dataset.split(split)
    if not 0 <= index < len(samples):
        raise click.UsageError(f"index {index} out of range for {split} "
                               f"({len(samples)} samples)")
    options = _options_from_flags(
        RunOptions(), _collect_overrides(mode, m, delta, bias_scale, no_csm, no_ikb,
                                         drop_k, drop_u))
    sample = samples[index]
    example = encode_sample(sample, vocab, dataset.inventory, m=options.m,
                            max_src_len=model.config.max_src_len,
                            max_tgt_len=model.config.max_tgt_len)
    ctx = build_context(model, example, vocab, options)
    result = run_generate(ctx, model, trace=trace)
    if trace:
        for step in result.steps:
            click.echo(json.dumps(step), err=True)
    click.echo(result.text)
    click.echo(f"reference: {sample.reference}", err=True)


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--split", type=click.Choice(["train", "dev", "test_id", "test_ood"]),
              default="dev")
@click.option("--index", type=int, default=0)
@click.option("--top-k", type=int, default=10)
@_run_option_flags
def inspect(checkpoint, data_dir, split, index, top_k, mode, m, delta, bias_scale,
            no_csm, no_ikb, drop_k, drop_u) -> None:
    """Dump bias top-K, keyword predictions, selection, and a generation trace."""
    from .corpus import encode_sample

    model, vocab, dataset = _load_eval_inputs(checkpoint, data_dir)
    samples = dataset.split(split)
    if not 0 <= index < len(samples):
        raise click.UsageError(f"index {index} out of range for {split} "
                               f"({len(samples)} samples)")
    options = _options_from_flags(
        RunOptions(), _collect_overrides(mode, m, delta, bias_scale, no_csm, no_ikb,
                                         drop_k, drop_u))
    sample = samples[index]
    example = encode_sample(sample, vocab, dataset.inventory, m=options.m,
                            max_src_len=model.config.max_src_len,
                            max_tgt_len=model.config.max_tgt_len)
    ctx = build_context(model, example, vocab, options)
    result = run_generate(ctx, model, trace=True)
    click.echo(json.dumps({
        "split": split,
        "index": index,
        "bias_top": top_biased_tokens(ctx.bias, vocab.id_to_token, k=top_k),
        "keywords": keyword_panel(ctx, dataset.inventory),
        "selection": ctx.selection.to_json(),
        "generated": result.text,
        "reference": sample.reference,
        "trace": result.steps,
    }, indent=2))


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@_run_option_flags
@click.option("--ui-dir", type=click.Path(exists=True, path_type=Path), default=None,
              help="serve a built web client from this directory at /")
def serve(checkpoint, host, port, mode, m, delta, bias_scale, no_csm, no_ikb,
          drop_k, drop_u, ui_dir) -> None:
    """Serve the interactive guided-chat REST API."""
    import uvicorn

    model, vocab, inventory = load_checkpoint(checkpoint)
    options = _options_from_flags(
        RunOptions(), _collect_overrides(mode, m, delta, bias_scale, no_csm, no_ikb,
                                         drop_k, drop_u))
    app = create_app(model, vocab, inventory, options)
    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
