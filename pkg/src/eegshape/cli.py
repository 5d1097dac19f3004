"""Command-line entry point: ``eegshape <command> [options]``.

Every option can also come from a ``key=value`` file passed with
``--config``; flags given on the command line win. Failures print one
line ``code=<kind> msg=<text>`` on stderr and exit non-zero.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import evaluate as ev
from . import gan, pipeline
from .eeg import CLASSES, SynthConfig, ingest_csv, stack_segments, synth_eeg, write_csv
from .errors import CheckpointError, ConfigError, DataError, NonFiniteError, ShapeError, TrainingError
from .stimuli import normalize_image, rasterize, write_pgm

log = logging.getLogger("eegshape")

EXIT_CODES = {"usage": 2, "config": 3, "data": 4, "checkpoint": 5, "training": 6, "io": 7, "internal": 1}


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Opt:
    name: str
    type: type = str
    default: object = None
    required: bool = False
    choices: tuple | None = None
    help: str = ""

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


COMMANDS: dict[str, tuple[str, list[Opt]]] = {
    "synth-data": ("write a synthetic EEG CSV", [
        Opt("out", required=True, help="CSV file to write"),
        Opt("trials-per-class", int, 8),
        Opt("seed", int, 0),
        Opt("noise-amplitude", float, SynthConfig.noise_amplitude),
    ]),
    "train-encoder": ("train the EEG classifier", [
        Opt("data", required=True, help="EEG CSV"),
        Opt("out", required=True, help="checkpoint directory"),
        Opt("epochs", int, 1000),
        Opt("seed", int, 0),
        Opt("split-seed", int, None, help="train/test split seed (defaults to --seed)"),
        Opt("batch-size", int, 50),
        Opt("learning-rate", float, 5e-4),
    ]),
    "train-gan": ("train the shape GAN on encoder representations", [
        Opt("data", required=True), Opt("encoder", required=True), Opt("out", required=True),
        Opt("mode", str, "full", choices=gan.MODES),
        Opt("lambda", float, 0.01, help="weight of the alignment term"),
        Opt("epochs", int, 150),
        Opt("seed", int, 0),
        Opt("batch-size", int, 50),
        Opt("learning-rate", float, 2e-4),
        Opt("pool-per-class", int, None, help="train on at most this many representations per class"),
    ]),
    "generate": ("write generated shapes and a sample grid", [
        Opt("gan", required=True), Opt("encoder", required=True), Opt("data", required=True),
        Opt("n", int, 8, help="samples per class"),
        Opt("seed", int, 0),
        Opt("out", required=True, help="output directory"),
    ]),
    "evaluate": ("score a trained GAN", [
        Opt("gan", required=True), Opt("encoder", required=True), Opt("data", required=True),
        Opt("samples-per-class", int, 1000),
        Opt("seed", int, 0),
        Opt("scorer-seed", int, 0),
        Opt("out", required=True, help="report file"),
    ]),
    "rasterize": ("write one canonical stimulus as PGM", [
        Opt("label", required=True, choices=CLASSES),
        Opt("out", required=True),
    ]),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eegshape", description="Reconstruct geometric shapes from EEG.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (help_, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key=value file with defaults for these options")
        for o in opts:
            # None marks "not given" so config-file values can fill the gap
            p.add_argument(f"--{o.name}", dest=o.dest, type=o.type, choices=o.choices, default=None,
                           help=o.help or None)
    return parser


def read_config(path, opts: list[Opt]) -> dict:
    """Parse a ``key=value`` file; keys are option names (``-`` or ``_`` both accepted)."""
    known = {o.name: o for o in opts}
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    for n, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in known:
            raise ConfigError(f"{path} line {n}: unknown key {key!r}")
        o = known[key]
        try:
            v = o.type(value)
        except ValueError as exc:
            raise ConfigError(f"{path} line {n}: {key} expects {o.type.__name__}, got {value!r}") from exc
        if o.choices and v not in o.choices:
            raise ConfigError(f"{path} line {n}: {key} must be one of {', '.join(o.choices)}")
        values[o.dest] = v
    return values


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < command-line flags."""
    opts = COMMANDS[args.command][1]
    from_file = read_config(args.config, opts) if args.config else {}
    out = {}
    for o in opts:
        v = getattr(args, o.dest)
        if v is None:
            v = from_file.get(o.dest, o.default)
        if v is None and o.required:
            raise UsageError(f"{args.command}: --{o.name} is required (flag or config key)")
        out[o.dest] = v
    return out


# --------------------------------------------------------------------------
# Commands

def _out_file(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_synth_data(o):
    recs = synth_eeg(o["trials_per_class"], o["seed"], SynthConfig(noise_amplitude=o["noise_amplitude"]))
    write_csv(recs, _out_file(o["out"]))
    print(f"wrote {len(recs)} recordings to {o['out']}")


def cmd_train_encoder(o):
    recs = ingest_csv(o["data"])
    cfg = enc.EncoderConfig(epochs=o["epochs"], batch_size=o["batch_size"], learning_rate=o["learning_rate"],
                            seed=o["seed"])
    model, split, history = pipeline.fit_encoder(recs, cfg, split_seed=o["split_seed"])
    out = pipeline.save_encoder(o["out"], model)
    pipeline.write_history(out / "history.csv", history, pipeline.ENCODER_HISTORY)
    acc = history[-1]["test_acc"] if history else enc.accuracy(model.params, *stack_segments(split.test))
    print(f"encoder saved to {out} (train {len(split.train)}, test {len(split.test)}, test_acc {acc:.4f})")


def cmd_train_gan(o):
    recs = ingest_csv(o["data"])
    model = pipeline.load_encoder(o["encoder"])
    r_tr, y_tr, _, _ = pipeline.encoded_split(recs, model)
    cfg = gan.GanTrainConfig(lambda_align=o["lambda"], learning_rate=o["learning_rate"], epochs=o["epochs"],
                             batch_size=o["batch_size"], seed=o["seed"], mode=o["mode"])
    gen, disc, history = pipeline.fit_gan(r_tr, y_tr, cfg, pool_per_class=o["pool_per_class"])
    meta = {"pool_per_class": str(o["pool_per_class"] or "all")}
    out = pipeline.save_gan(o["out"], gen, disc, cfg, meta)
    pipeline.write_history(out / "history.csv", history, gan.HISTORY_COLUMNS)
    last = history[-1] if history else {}
    print(f"gan saved to {out} (mode {cfg.mode}, epochs {len(history)}, "
          f"mean_S_r {last.get('mean_S_r', float('nan')):.4f})")


def _load_models(o):
    recs = ingest_csv(o["data"])
    model = pipeline.load_encoder(o["encoder"])
    gen, disc, cfg = pipeline.load_gan(o["gan"])
    _, _, r_te, y_te = pipeline.encoded_split(recs, model)
    return gen, disc, cfg, r_te, y_te


def cmd_generate(o):
    gen, _, cfg, reprs, labels = _load_models(o)
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([o["seed"], 50])
    cond, y = ev.sample_conditions(reprs, labels, o["n"], rng)
    images, _ = ev.generate(gen, cond, cfg.conditioned, rng)
    for i, (img, k) in enumerate(zip(images, y)):
        write_pgm(out / f"{CLASSES[k]}_{i % o['n']:03d}.pgm", img, domain="normalized")
    grid = ev.sample_grid(gen, reprs, labels, o["n"], seed=o["seed"], conditioned=cfg.conditioned)
    write_pgm(out / "grid.pgm", grid, domain="normalized")
    print(f"wrote {len(images)} images and grid.pgm to {out}")


def cmd_evaluate(o):
    gen, disc, cfg, reprs, labels = _load_models(o)
    scorer, _ = ev.train_scoring_classifier(o["scorer_seed"])
    report = ev.evaluate_gan(gen, disc, scorer, reprs, labels, cfg, o["samples_per_class"], o["seed"],
                             o["scorer_seed"])
    text = report.to_text()
    _out_file(o["out"]).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_rasterize(o):
    write_pgm(_out_file(o["out"]), normalize_image(rasterize(o["label"])).pixels, domain="normalized")
    print(f"wrote {o['label']} to {o['out']}")


HANDLERS = {"synth-data": cmd_synth_data, "train-encoder": cmd_train_encoder, "train-gan": cmd_train_gan,
            "generate": cmd_generate, "evaluate": cmd_evaluate, "rasterize": cmd_rasterize}


def _classify(exc: BaseException) -> str:
    if isinstance(exc, UsageError):
        return "usage"
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, CheckpointError):
        return "checkpoint"
    if isinstance(exc, (NonFiniteError, TrainingError)):
        return "training"
    if isinstance(exc, (DataError, ShapeError, ValueError)):
        return "data"
    if isinstance(exc, OSError):
        return "io"
    return "internal"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        HANDLERS[args.command](resolve(args))
        return 0
    except Exception as exc:  # noqa: BLE001 - every failure becomes one machine-readable line
        kind = _classify(exc)
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"code={kind} msg={msg}", file=sys.stderr)
        return EXIT_CODES[kind]


if __name__ == "__main__":
    sys.exit(main())
