"""Command-line entry point: ``mmunet <command> [flags]``.

Commands::

    gen-data      write a phantom dataset folder
    train         train from a key=value config; writes config.txt, train.log, model.ckpt
    eval          print acc/miou/iou of a checkpoint on a dataset folder
    predict       segment one PPM image into a PGM mask
    count-params  print total=N overhead=M for a model spec
    grad-check    finite-difference check of every operator

Exit codes:

    0  success
    2  bad command-line usage
    3  missing file or directory
    4  file or config that does not parse
    5  invalid value or violated invariant (shapes, class ids, config ranges)
    6  gradient check failed
"""

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from . import data_io, gradcheck, models, training
from .errors import ConfigError, FormatError, MMUNetError

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_PARSE, EXIT_INVALID, EXIT_GRADCHECK = 0, 2, 3, 4, 5, 6

CONFIG_NAME = "config.txt"
LOG_NAME = "train.log"
CHECKPOINT_NAME = "model.ckpt"


class ParseError(MMUNetError):
    """Config text that cannot be read (unknown key, malformed line, bad literal)."""


# ------------------------------------------------------------------ RunConfig


def _run_fields():
    """Ordered ``(key, default, section, attribute)`` for every RunConfig key."""
    out = []
    for f in fields(models.ModelSpec):
        if f.name != "levels":
            out.append((f.name, f.default, "model", f.name))
    for f in fields(training.TrainConfig):
        if f.name != "input_size":  # tied to the model's input_size
            out.append((f.name, f.default, "train", f.name))
    for f in fields(data_io.PhantomSpec):
        out.append((f"phantom_{f.name}", f.default, "phantom", f.name))
    out.append(("split_ratios", (4, 1, 0), "split", "ratios"))
    return out


RUN_FIELDS = _run_fields()
DEFAULTS = {key: default for key, default, _, _ in RUN_FIELDS}


def _parse_value(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text not in ("true", "false"):
                raise ValueError
            return text == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(v) for v in text.split(","))
        return text
    except ValueError:
        raise ParseError(f"{key}: cannot read {text!r} as {type(default).__name__}") from None


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def parse_config(text):
    """Flat ``key=value`` text -> full settings dict (defaults filled in)."""
    settings = dict(DEFAULTS)
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ParseError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ParseError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        settings[key] = _parse_value(key, value, DEFAULTS[key])
    return settings


def dump_config(settings):
    return "".join(f"{key}={_format_value(settings[key])}\n" for key, *_ in RUN_FIELDS)


def load_config(path):
    return parse_config(Path(path).read_text())


def build_specs(settings):
    """Settings dict -> validated (ModelSpec, TrainConfig, PhantomSpec, split ratios)."""
    parts = {"model": {}, "train": {}, "phantom": {}, "split": {}}
    for key, _, section, attr in RUN_FIELDS:
        parts[section][attr] = settings[key]
    spec = models.ModelSpec(**parts["model"]).validate()
    cfg = training.TrainConfig(input_size=spec.input_size, **parts["train"]).validate()
    phantom = data_io.PhantomSpec(**parts["phantom"]).validate()
    return spec, cfg, phantom, parts["split"]["ratios"]


# ------------------------------------------------------------------- commands


def cmd_gen_data(args):
    spec = data_io.PhantomSpec(count=args.count, size=args.size, seed=args.seed)
    if args.noise_sigma is not None:
        spec.noise_sigma = args.noise_sigma
    spec.validate()
    data_io.write_dataset(args.out, data_io.gen_phantom(spec), spec)
    print(f"wrote {spec.count} samples to {args.out}")
    return EXIT_OK


def cmd_train(args):
    settings = load_config(args.config) if args.config else dict(DEFAULTS)
    spec, cfg, phantom, ratios = build_specs(settings)
    if args.data:
        samples = data_io.read_dataset(args.data)
    else:
        samples = data_io.gen_phantom(phantom)
    train_set, val_set, _ = data_io.split(samples, ratios, seed=cfg.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_NAME).write_text(dump_config(settings))
    model = models.build(spec, seed=cfg.seed)
    with open(out / LOG_NAME, "w") as log:

        def on_epoch(row):
            log.write(row + "\n")
            log.flush()
            print(row, flush=True)

        result = training.train(model, train_set, val_set, cfg, on_epoch)
    data_io.save_checkpoint(result.best_state, out / CHECKPOINT_NAME)
    print(f"best epoch={result.best_epoch} {result.best_metrics}")
    return EXIT_OK


def _model_for(checkpoint, config):
    path = Path(config) if config else Path(checkpoint).with_name(CONFIG_NAME)
    if not Path(checkpoint).exists():
        raise FileNotFoundError(f"{checkpoint} not found")
    spec, cfg, _, _ = build_specs(load_config(path))
    model = models.build(spec, seed=cfg.seed)
    data_io.load_checkpoint(checkpoint, model)
    return model, cfg


def cmd_eval(args):
    model, cfg = _model_for(args.checkpoint, args.config)
    samples = data_io.read_dataset(args.data)
    print(training.evaluate(model, samples, cfg.batch_size))
    return EXIT_OK


def cmd_predict(args):
    model, _ = _model_for(args.checkpoint, args.config)
    image = data_io.read_image(args.image)
    mask = training.predict(model, image[None])[0]
    data_io.write_mask(args.out, mask)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_count_params(args):
    spec = models.ModelSpec(args.variant, base_width=args.base_width, input_size=args.input_size)
    print(models.count_params(spec))
    return EXIT_OK


def cmd_grad_check(args):
    if args.op is not None and args.op not in gradcheck.OPS and args.op != "mm_unet":
        raise ConfigError(f"unknown op {args.op!r}; choose from {', '.join(gradcheck.OPS)}, mm_unet")
    results = gradcheck.run_all(seed=args.seed, only=args.op)
    for r in results:
        print(r)
    return EXIT_OK if all(r.passed for r in results) else EXIT_GRADCHECK


# ----------------------------------------------------------------------- main


def build_parser():
    p = argparse.ArgumentParser(prog="mmunet", description="MM-UNet desk-scale toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a phantom dataset folder")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-sigma", type=float, default=None)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model from a key=value config")
    t.add_argument("--config", default=None, help="config file; defaults apply to missing keys")
    t.add_argument("--data", default=None, help="dataset folder; omitted -> phantoms from the config")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset folder")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--config", default=None, help="defaults to config.txt beside the checkpoint")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="segment one PPM image")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--config", default=None, help="defaults to config.txt beside the checkpoint")
    pr.set_defaults(func=cmd_predict)

    c = sub.add_parser("count-params", help="print parameter totals")
    c.add_argument("--variant", default="mm-unet")
    c.add_argument("--base-width", type=int, default=64)
    c.add_argument("--input-size", type=int, default=256)
    c.set_defaults(func=cmd_count_params)

    k = sub.add_parser("grad-check", help="finite-difference gradient checks")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--op", default=None)
    k.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        code, msg = EXIT_MISSING, f"missing file: {exc.filename or exc}"
    except (ParseError, FormatError) as exc:
        code, msg = EXIT_PARSE, str(exc)
    except (MMUNetError, KeyError) as exc:
        code, msg = EXIT_INVALID, str(exc)
    print(f"mmunet {args.command}: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
