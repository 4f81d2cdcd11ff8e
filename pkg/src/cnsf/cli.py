"""Command-line entry point: ``cnsf simulate | train | separate | evaluate | analyze-mask``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointFormatError
from .config import ConfigError, RunConfig, apply_overrides, load_config, preset_config
from .simulator.audio import AudioFormatError, read_wav, write_wav
from .simulator.dataset import ManifestError, SourcePool, generate_dataset
from .simulator.scene import SceneRanges
from .tensor import NumericalError, ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("cnsf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="sectioned key = value configuration file")
    p.add_argument("--preset", help="named override bundle applied before --config (e.g. overfit)")
    p.add_argument("--seed", type=int, help="seed for the command's random choices")
    p.add_argument("--mode", choices=["cnsf", "cnsf-mvdr"], help="direct masking or MVDR beamforming")
    p.add_argument("--profile", choices=["toy", "desk", "paper"], help="model size profile")
    p.add_argument("--out", metavar="PATH", help="output path")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cnsf", description="Complex neural spatial filter toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a multi-channel scene dataset")
    _common(p)
    p.add_argument("--count", type=int, required=True)

    p = sub.add_parser("train", help="train a mask estimator")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--valid-manifest", help="held-out manifest; default splits the training manifest")

    p = sub.add_parser("separate", help="write the target estimate of one mixture")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mixture", required=True)
    p.add_argument("--theta", type=float, required=True, metavar="DEGREES")

    p = sub.add_parser("evaluate", help="SI-SDR table over a manifest")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--identity", action="store_true", help="bypass the model with a unit mask")

    p = sub.add_parser("analyze-mask", help="export true and estimated cRM values per T-F bin")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--mixture", required=True)
    p.add_argument("--reference", required=True, help="clean reverberant target WAVE")
    p.add_argument("--theta", type=float, required=True, metavar="DEGREES")
    p.add_argument("--oracle", action="store_true", help="use the true mask as the estimate")
    return parser


def effective_config(args) -> RunConfig:
    base = preset_config(args.preset) if args.preset else RunConfig()
    cfg = load_config(args.config, base) if args.config else base
    values = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    cli = {"mode": args.mode, "profile": args.profile}
    if args.seed is not None:
        key = {"simulate": "sim_seed", "train": "train_seed"}.get(args.command)
        if key:
            cli[key] = args.seed
    if args.out is not None and args.command in ("simulate", "train"):
        cli["out"] = args.out
    values.update({k: v for k, v in cli.items() if v is not None})
    return apply_overrides(cfg, values).validate()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, count: int, out_dir) -> int:
    from .pipeline import build_geometry

    out = Path(out_dir)
    if out.exists() and not out.is_dir():
        raise OSError(f"{out}: exists and is not a directory")
    if count < 1:
        raise UsageError("--count must be positive")
    ranges = SceneRanges(
        t60=(cfg.t60_min, cfg.t60_max),
        sir_db=(cfg.sir_min, cfg.sir_max),
        snr_db=(cfg.snr_min, cfg.snr_max),
        noise_types=tuple(s.strip() for s in cfg.noise_types.split(",") if s.strip()),
    )
    pool = (
        SourcePool.from_dir(cfg.source_dir, cfg.source_seconds)
        if cfg.source_dir
        else SourcePool(cfg.source_seconds, base_seed=cfg.sim_seed)
    )
    rows = generate_dataset(out, count, cfg.sim_seed, build_geometry(cfg), ranges, cfg.conditions, pool)
    print(f"wrote {len(rows)} scenes to {out / 'manifest.tsv'}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, manifest, valid_manifest=None) -> int:
    from .pipeline import Trainer, build_geometry, load_manifest_audio, split_train_valid

    n_mics = build_geometry(cfg).n_mics
    utts = load_manifest_audio(manifest, n_mics)
    if valid_manifest:
        train, valid = utts, load_manifest_audio(valid_manifest, n_mics)
    else:
        train, valid = split_train_valid(utts, cfg.valid_fraction)
    if not train:
        raise ManifestError(f"{manifest}: no usable training utterances")
    if not valid:
        log.warning("no held-out utterances; validating on the training set")
        valid = train
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    result = Trainer(cfg, train, valid, out_dir=out).fit()
    print(
        f"trained {len(result.step_losses)} steps in {result.seconds:.0f} s; "
        f"best validation SI-SDR {result.best_valid_sisdr:.2f} dB ({result.stopped}); checkpoints in {out}"
    )
    return EXIT_OK


def cmd_separate(checkpoint, mixture, theta, out) -> int:
    from .pipeline import Separator

    if not 0.0 <= theta < 180.0:
        raise UsageError(f"--theta must lie in [0, 180) degrees, got {theta}")
    if out is None:
        raise UsageError("--out is required for separate")
    sep = Separator.load(checkpoint)
    mix = read_wav(mixture)
    if mix.shape[0] != sep.n_mics:
        raise ShapeError(f"{mixture}: {mix.shape[0]} channels, checkpoint expects {sep.n_mics}")
    est = sep.separate(mix, theta)
    write_wav(out, est)
    print(f"wrote {out} ({est.size} samples)")
    return EXIT_OK


def cmd_evaluate(checkpoint, manifest, out=None, identity: bool = False) -> int:
    from .pipeline import Separator, load_manifest_audio

    if checkpoint is None and not identity:
        raise UsageError("evaluate needs --checkpoint or --identity")
    sep = Separator.load(checkpoint) if checkpoint else None
    utts = load_manifest_audio(manifest, sep.n_mics if sep else None, strict=True)
    from .pipeline import evaluate_utterances

    text = evaluate_utterances(sep, utts, identity=identity).format()
    if out:
        Path(out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_analyze_mask(checkpoint, mixture, reference, theta, out, oracle: bool = False) -> int:
    from .pipeline import Separator, mask_scatter

    if checkpoint is None and not oracle:
        raise UsageError("analyze-mask needs --checkpoint or --oracle")
    if out is None:
        raise UsageError("--out is required for analyze-mask")
    sep = Separator.load(checkpoint) if checkpoint else None
    mix = read_wav(mixture)
    ref = read_wav(reference)
    if ref.shape[0] != 1 or ref.shape[1] != mix.shape[1]:
        raise AudioFormatError(f"{reference}: reference must be mono with the mixture's length")
    rows, _ = mask_scatter(sep, mix, ref[0], theta, oracle=oracle)
    header = "t\tf\ttrue_re\ttrue_im\test_re\test_im"
    np.savetxt(out, rows, fmt=["%d", "%d", "%.7g", "%.7g", "%.7g", "%.7g"], delimiter="\t", header=header, comments="")
    print(f"wrote {rows.shape[0]} rows to {out}")
    return EXIT_OK


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required: simulate | train | separate | evaluate | analyze-mask")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cfg = effective_config(args)
    if args.print_config:
        sys.stdout.write(cfg.to_ini())
        return EXIT_OK
    if args.command == "simulate":
        if args.out is None:
            raise UsageError("--out is required for simulate")
        return cmd_simulate(cfg, args.count, args.out)
    if args.command == "train":
        return cmd_train(cfg, args.manifest, args.valid_manifest)
    if args.command == "separate":
        return cmd_separate(args.checkpoint, args.mixture, args.theta, args.out)
    if args.command == "evaluate":
        return cmd_evaluate(args.checkpoint, args.manifest, args.out, args.identity)
    return cmd_analyze_mask(args.checkpoint, args.mixture, args.reference, args.theta, args.out, args.oracle)


def main(argv=None) -> int:
    try:
        return run(argv)
    except (UsageError, ConfigError) as exc:
        print(f"cnsf: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"cnsf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (AudioFormatError, ManifestError, CheckpointFormatError, ShapeError) as exc:
        print(f"cnsf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError) as exc:
        print(f"cnsf: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
