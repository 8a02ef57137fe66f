"""Command-line entry point: generate, prepare, train, eval, sweep, attention.

Settings can come from a flat ``key=value`` file passed with ``--config``;
explicit flags override the file, and the file overrides built-in defaults.
Every subcommand writes ``manifest.txt`` into ``--out`` before doing any work.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import DataError, PrepareConfig, SynthConfig, ingest, load_prepared, prepare, synth_generate, write_prepared
from .data.prepared import parse_kv
from .evaluation import (
    DEFAULT_KS,
    attention_csv,
    attention_rows,
    attention_stats,
    collect_attention,
    evaluate_checkpoint,
    model_config_from,
    sweep,
    sweep_csv,
)
from .model import VARIANT_NOTES, VARIANTS, ModelConfig, param_shapes
from .training import NumericError, TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _settings(cls, skip=()) -> dict[str, tuple[type, object]]:
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        default = f.default
        kind = _bool if isinstance(default, bool) else type(default)
        out[f.name] = (kind, default)
    return out


SYNTH = _settings(SynthConfig)
PREPARE = _settings(PrepareConfig)
MODEL = _settings(ModelConfig)
TRAIN = _settings(TrainConfig)
TRAIN_SETTINGS = {**MODEL, **TRAIN, "timing": (_bool, True)}


def _add_settings(parser, table, **help_text):
    for name, (kind, default) in table.items():
        flag = "--" + name.replace("_", "-")
        extra = {"choices": VARIANTS} if name == "variant" else {}
        parser.add_argument(flag, dest=name, type=kind, default=None,
                            help=help_text.get(name, f"default {default}"), **extra)


def resolve(args, table) -> dict[str, object]:
    """Defaults, then the ``--config`` file, then explicit flags."""
    values = {name: default for name, (_, default) in table.items()}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise DataError("config file not found", path)
        for key, text in parse_kv(path.read_text(encoding="utf-8").splitlines()).items():
            if key not in table:
                raise UsageError(f"unknown setting {key!r} in {path}")
            try:
                values[key] = table[key][0](text)
            except ValueError as exc:
                raise UsageError(f"bad value for {key} in {path}: {exc}") from None
    for name in table:
        given = getattr(args, name, None)
        if given is not None:
            values[name] = given
    return values


def write_manifest(out: Path, command: str, inputs: dict, settings: dict, seed: int, extra=()) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"subcommand={command}", f"version={__version__}", f"seed={seed}"]
    lines += [f"input.{k}={v}" for k, v in inputs.items()]
    lines.append(f"output={out}")
    lines += [f"config.{k}={v}" for k, v in settings.items()]
    lines += list(extra)
    path = out / "manifest.txt"
    path.write_bytes("".join(line + "\n" for line in lines).encode("utf-8"))
    return path


def _write(path: Path, text: str) -> None:
    path.write_bytes(text.encode("utf-8"))


def _split_model_train(values: dict) -> tuple[ModelConfig, TrainConfig]:
    try:
        mc = ModelConfig(**{k: values[k] for k in MODEL})
        tc = TrainConfig(**{k: values[k] for k in TRAIN})
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return mc, tc


def _ks(text: str | None) -> tuple[int, ...]:
    if not text:
        return DEFAULT_KS
    try:
        ks = tuple(int(k) for k in text.split(","))
    except ValueError:
        raise UsageError(f"--ks expects comma-separated integers, got {text!r}") from None
    if any(k < 1 for k in ks):
        raise UsageError("every K must be >= 1")
    return ks


# subcommands


def cmd_generate(args) -> int:
    values = resolve(args, SYNTH)
    out = Path(args.out)
    write_manifest(out, "generate", {}, values, values["seed"])
    try:
        config = SynthConfig(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    paths = synth_generate(config, out)
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    values = resolve(args, PREPARE)
    out = Path(args.out)
    inputs = {"events": args.events, "social": args.social, "deps": args.deps}
    write_manifest(out, "prepare", inputs, values, values["seed"])
    try:
        config = PrepareConfig(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    corpus = prepare(ingest(args.events, args.social, args.deps), config)
    write_prepared(corpus, out)
    for key, value in corpus.summary().items():
        print(f"{key}\t{value}")
    return EXIT_OK


def cmd_train(args) -> int:
    values = resolve(args, TRAIN_SETTINGS)
    mc, tc = _split_model_train(values)
    out = Path(args.out)
    write_manifest(out, "train", {"corpus": args.corpus}, values, tc.seed,
                   [f"variant_modification={VARIANT_NOTES[mc.variant]}"])
    echo = "".join(f"{k}={v}\n" for k, v in values.items())
    _write(out / "config.txt", echo)
    print(echo, end="")
    corpus = load_prepared(args.corpus)
    log_path = out / "train_log.tsv"
    _write(log_path, "epoch\ttrain_nll\tvalid_hr10\twall_seconds\n")

    def append(entry):
        with log_path.open("ab") as fh:
            fh.write((entry.line() + "\n").encode("utf-8"))
        print(entry.line(), flush=True)

    clock = time.perf_counter if values["timing"] else (lambda: 0.0)
    result = train(corpus, mc, tc, on_epoch=append, clock=clock)
    save_checkpoint(out / "model.ckpt", result.params, result.checkpoint_config(), tc.seed)
    print(f"best epoch {result.best_epoch}; checkpoint {out / 'model.ckpt'}")
    return EXIT_OK


def _checked_checkpoint(path, corpus):
    """Load a checkpoint and compare its tensors with what the corpus needs."""
    ckpt = load_checkpoint(path)
    config = model_config_from(ckpt.config)
    expected = param_shapes(config, corpus.num_packages, corpus.num_developers)
    diff = []
    for name, shape in expected.items():
        got = ckpt.params.get(name)
        if got is None:
            diff.append(f"  {name}: missing from checkpoint (corpus needs {shape})")
        elif tuple(got.shape) != shape:
            diff.append(f"  {name}: checkpoint {tuple(got.shape)} vs corpus {shape}")
    diff += [f"  {name}: not used by this model" for name in ckpt.params if name not in expected]
    if diff:
        head = (f"checkpoint {path} does not match corpus "
                f"(corpus has {corpus.num_packages} packages, {corpus.num_developers} developers):")
        raise CheckpointError("\n".join([head] + diff))
    return ckpt


def cmd_eval(args) -> int:
    ks = _ks(args.ks)
    out = Path(args.out)
    settings = {"split": args.split, "ks": ",".join(map(str, ks)), "variant": args.variant or ""}
    write_manifest(out, "eval", {"corpus": args.corpus, "checkpoint": args.checkpoint}, settings,
                   _peek_seed(args.checkpoint))
    corpus = load_prepared(args.corpus)
    ckpt = _checked_checkpoint(args.checkpoint, corpus)
    try:
        report = evaluate_checkpoint(ckpt, corpus, args.split, args.variant, ks)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write(out / "report.txt", report.to_text())
    _write(out / "report.csv", report.to_csv())
    print(report.to_text(), end="")
    return EXIT_OK


def _peek_seed(path) -> int:
    try:
        return load_checkpoint(path).seed
    except CheckpointError:
        return 0


def cmd_sweep(args) -> int:
    values = resolve(args, {**MODEL, **TRAIN})
    mc, tc = _split_model_train(values)
    ks = _ks(args.ks)
    try:
        points = [int(v) for v in args.values.split(",")]
    except ValueError:
        raise UsageError(f"--values expects comma-separated integers, got {args.values!r}") from None
    out = Path(args.out)
    settings = {**values, "axis": args.axis, "values": args.values, "ks": ",".join(map(str, ks))}
    write_manifest(out, "sweep", {"corpus": args.corpus}, settings, tc.seed)
    corpus = load_prepared(args.corpus)
    try:
        rows = sweep(args.axis, points, corpus, mc, tc, ks)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for row in rows:
        _write(out / f"report_{row.axis}_{row.value}.txt", row.report.to_text())
        _write(out / f"report_{row.axis}_{row.value}.csv", row.report.to_csv())
    text = sweep_csv(rows)
    _write(out / "sweep.csv", text)
    print(text, end="")
    return EXIT_OK


def cmd_attention(args) -> int:
    out = Path(args.out)
    write_manifest(out, "attention", {"corpus": args.corpus, "checkpoint": args.checkpoint},
                   {"split": args.split}, _peek_seed(args.checkpoint))
    corpus = load_prepared(args.corpus)
    ckpt = _checked_checkpoint(args.checkpoint, corpus)
    config = model_config_from(ckpt.config)
    if not config.uses_social:
        raise UsageError(f"variant {config.variant!r} has no social attention to export")
    records = collect_attention(ckpt.params, corpus, config, args.split, ckpt.seed)
    rows = attention_rows(records)
    stats = attention_stats(rows)
    names = corpus.developers
    _write(out / "attention.csv", attention_csv(rows, names))
    _write(out / "variance.csv", stats.distributions_csv(names))
    summary = (f"records\t{len(records)}\nmean_intra\t{stats.mean_intra!r}\n"
               f"mean_inter\t{stats.mean_inter!r}\nmean_across\t{stats.mean_across!r}\n")
    _write(out / "attention_summary.txt", summary)
    print(summary, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssdrec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic events/social/dependency corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_settings(p, SYNTH)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("prepare", help="sessionize, filter and split raw interaction files")
    p.add_argument("--events", required=True)
    p.add_argument("--social", required=True)
    p.add_argument("--deps", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_settings(p, PREPARE)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_settings(p, TRAIN_SETTINGS, timing="record wall-clock seconds in the log (default true)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-K metrics of a checkpoint on one split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--ks", help="comma-separated cutoffs, default 10,20,50")
    p.add_argument("--variant", choices=VARIANTS, help="assert the checkpoint's variant")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="retrain and evaluate over beta, gamma or session lifespan")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--axis", required=True, choices=("beta", "gamma", "lifespan"))
    p.add_argument("--values", required=True)
    p.add_argument("--ks")
    p.add_argument("--config")
    _add_settings(p, {**MODEL, **TRAIN})
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("attention", help="export social attention weights and their variances")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.set_defaults(func=cmd_attention)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ssdrec {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"ssdrec {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"ssdrec {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
