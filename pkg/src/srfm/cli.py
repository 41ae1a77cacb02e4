"""Command-line entry point.

Every subcommand reads one JSON run config (``--config``) and accepts dotted
overrides (``--set model.hidden_dim=8``). Exit codes: 0 success, 1 runtime
failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ModelConfig, OptimConfig, TrainConfig
from .data.records import Dataset, ParseError
from .data.synth import SynthConfig, dataset_path, generate
from .pipeline import (SPLITS, CheckpointError, TrainingDiverged, evaluate, export_embeddings,
                       finetune, load_checkpoint, pretrain, report_rows, save_checkpoint,
                       write_metrics)

log = logging.getLogger("srfm")

COMMANDS = ("gen-data", "pretrain", "finetune", "evaluate", "export-emb", "gradcheck")


@dataclasses.dataclass
class TrainSection:
    epochs: int = 5
    batch_size: int = 128
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def to_train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
                           optim=OptimConfig(self.lr, self.beta1, self.beta2, self.eps))


@dataclasses.dataclass
class PathSection:
    data_dir: str = "data"
    checkpoint: str = "runs/pretrained.srfm"
    finetuned: str = "runs/finetuned.srfm"
    metrics: str = "runs/metrics.jsonl"
    embeddings: str = "runs/embeddings.txt"


@dataclasses.dataclass
class FinetuneSection:
    domain: int = 0          # 0 = synth.cold_domain
    split: str = "freeze_L0_L1"


@dataclasses.dataclass
class EvaluateSection:
    checkpoint: str = ""     # empty = paths.checkpoint
    split: str = "test"
    domains: list = dataclasses.field(default_factory=list)   # empty = every domain the model knows
    metrics: str = ""        # optional metric-rows file; the report always goes to stdout


@dataclasses.dataclass
class GradcheckSection:
    seeds: list = dataclasses.field(default_factory=lambda: [0])
    eps: float = 1e-5
    tolerance: float = 1e-4
    sweep: bool = False      # all strategy x divergence x trunk combinations


SECTIONS = {
    "model": ModelConfig, "synth": SynthConfig, "train": TrainSection, "paths": PathSection,
    "finetune": FinetuneSection, "evaluate": EvaluateSection, "gradcheck": GradcheckSection,
}


@dataclasses.dataclass
class RunConfig:
    model: ModelConfig
    synth: SynthConfig
    train: TrainSection
    paths: PathSection
    finetune: FinetuneSection
    evaluate: EvaluateSection
    gradcheck: GradcheckSection

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = sorted(set(doc) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
        built = {}
        for name, kind in SECTIONS.items():
            section = doc.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            fields = {f.name for f in dataclasses.fields(kind)}
            bad = sorted(set(section) - fields)
            if bad:
                raise ConfigError(f"unknown key(s) in {name}: {', '.join(bad)}")
            try:
                built[name] = kind(**section)
            except (TypeError, ValueError) as err:
                raise ConfigError(f"invalid {name} section: {err}") from None
        out = cls(**built)
        out.paths = dataclasses.replace(out.paths, **{
            f.name: str(Path(getattr(out.paths, f.name)).expanduser().resolve())
            for f in dataclasses.fields(PathSection)})
        if out.model.frozen_table_path:
            out.model = out.model.replace(
                frozen_table_path=str(Path(out.model.frozen_table_path).expanduser().resolve()))
        for key in ("checkpoint", "metrics"):
            if getattr(out.evaluate, key):
                setattr(out.evaluate, key, str(Path(getattr(out.evaluate, key)).expanduser().resolve()))
        if out.finetune.split not in SPLITS:
            raise ConfigError(f"finetune.split must be one of {sorted(SPLITS)}")
        return out

    def to_dict(self):
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}


def _parse_value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(doc, overrides):
    """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
    doc = json.loads(json.dumps(doc))
    for item in overrides:
        key, sep, raw = item.partition("=")
        parts = key.strip().split(".")
        if not sep or len(parts) != 2 or not all(parts):
            raise ConfigError(f"override {item!r} must look like section.key=value")
        section, field = parts
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in override {item!r}")
        doc.setdefault(section, {})[field] = _parse_value(raw)
    return doc


def load_run_config(path, overrides=()):
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config {path} is not valid JSON: {err}") from None
    return RunConfig.from_dict(apply_overrides(doc, overrides))


# --- commands -------------------------------------------------------------------

def _split_files(rc: RunConfig, split, domains):
    files = [dataset_path(rc.paths.data_dir, k, split) for k in domains]
    missing = [str(f) for f in files if not Path(f).exists()]
    if missing:
        raise FileNotFoundError(f"missing data file(s): {', '.join(missing)}")
    return Dataset.from_files(files)


def cmd_gen_data(rc: RunConfig):
    written = generate(rc.synth, rc.paths.data_dir)
    log.info("wrote %d files to %s", len(written), rc.paths.data_dir)
    return 0


def cmd_pretrain(rc: RunConfig):
    domains = list(range(1, rc.model.num_domains + 1))
    train = _split_files(rc, "train", domains)
    eval_data = _split_files(rc, "eval", domains)
    rows = []
    try:
        ckpt = pretrain(rc.model, train, eval_data, rc.train.to_train_config(), metrics=rows)
    except TrainingDiverged as err:
        save_checkpoint(err.checkpoint, rc.paths.checkpoint)
        write_metrics(rc.paths.metrics, rows)
        raise
    save_checkpoint(ckpt, rc.paths.checkpoint)
    write_metrics(rc.paths.metrics, rows)
    log.info("checkpoint written to %s (best epoch %s)", rc.paths.checkpoint, ckpt.meta["best_epoch"])
    return 0


def _cold_domain(rc):
    domain = rc.finetune.domain or rc.synth.cold_domain
    if not domain:
        raise ConfigError("set finetune.domain (or synth.cold_domain) for finetune")
    return int(domain)


def cmd_finetune(rc: RunConfig):
    domain = _cold_domain(rc)
    parent = load_checkpoint(rc.paths.checkpoint)
    cold = _split_files(rc, "train", [domain])
    eval_data = _split_files(rc, "eval", [domain])
    rows = []
    ckpt = finetune(parent, rc.finetune.split, cold, eval_data, rc.train.to_train_config(),
                    metrics=rows)
    save_checkpoint(ckpt, rc.paths.finetuned)
    write_metrics(rc.paths.metrics, rows)
    log.info("finetuned checkpoint written to %s", rc.paths.finetuned)
    return 0


def _eval_target(rc):
    path = rc.evaluate.checkpoint or rc.paths.checkpoint
    ckpt = load_checkpoint(path)
    domains = rc.evaluate.domains or ckpt.model.domains
    return ckpt, _split_files(rc, rc.evaluate.split, domains)


def cmd_evaluate(rc: RunConfig):
    ckpt, data = _eval_target(rc)
    report = evaluate(ckpt, data)
    if rc.evaluate.metrics:
        write_metrics(rc.evaluate.metrics, report_rows(report, step=ckpt.meta.get("step")))
    json.dump(report, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def cmd_export_emb(rc: RunConfig):
    ckpt, data = _eval_target(rc)
    n = export_embeddings(ckpt, data, rc.paths.embeddings)
    log.info("wrote %d rows to %s", n, rc.paths.embeddings)
    return 0


def cmd_gradcheck(rc: RunConfig):
    from . import gradcheck

    gc = rc.gradcheck
    if gc.sweep:
        results = gradcheck.sweep(tuple(gc.seeds), gc.eps)
    else:
        m = rc.model
        cfg = gradcheck.tiny_config(gating_strategy=m.gating_strategy, divergence=m.divergence,
                                    mtl_kind=m.mtl_kind, domain_adaptive=m.domain_adaptive,
                                    text_encoder=m.text_encoder if m.text_encoder != "frozen_table"
                                    else "mean_pool", lambda_reg=m.lambda_reg)
        results = {(m.gating_strategy, m.divergence, m.mtl_kind, s):
                   gradcheck.model_grad_check(cfg, gradcheck.tiny_records(s), s, gc.eps)
                   for s in gc.seeds}
    worst = max(results.values())
    for key, err in sorted(results.items()):
        log.info("%s rel err %.3e", "/".join(map(str, key)), err)
    print(f"max_relative_error {worst:.6e}")
    return 0 if worst < gc.tolerance else 1


HANDLERS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
            "evaluate": cmd_evaluate, "export-emb": cmd_export_emb, "gradcheck": cmd_gradcheck}


def build_parser():
    parser = argparse.ArgumentParser(prog="srfm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override one config key (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    try:
        rc = load_run_config(args.config, args.overrides)
    except ConfigError as err:
        print(f"srfm: config error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    print(json.dumps(rc.to_dict(), sort_keys=True, indent=2), file=sys.stderr)
    try:
        return HANDLERS[args.command](rc)
    except ConfigError as err:
        print(f"srfm: config error: {err}", file=sys.stderr)
        return 2
    except (OSError, CheckpointError, ParseError, TrainingDiverged, ValueError) as err:
        log.error("%s failed: %s", args.command, err)
        return 1


if __name__ == "__main__":
    sys.exit(main())
