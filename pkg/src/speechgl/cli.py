"""Command-line front end.

    speechgl synth   [MANIFEST] [OUT_DIR]
    speechgl train   CONFIG [--out-dir DIR]
    speechgl enhance IN_WAV OUT_WAV --mode {wiener,parametric,identity,model:CKPT} [...]
    speechgl eval    DATASET MODE REPORT_CSV [--split test] [--config CFG]
    speechgl verify  REPORT_CSV [--quick] [--gammas 1,2,3]

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import corpus, verification
from .errors import InvalidConfigError, SpeechGLError
from .model import checkpoint_metadata, save_checkpoint
from .pipeline import (
    PreparedUtterance,
    enhance,
    ensure_dir,
    evaluate,
    load_config,
    load_prepared,
    loss_log_csv,
    prepare,
    report_csv,
    resolve_mode,
    run_sweep,
    sweep_csv,
    train_on,
)
from .spectral import StftConfig, stft
from .wavio import read_wav, write_wav

log = logging.getLogger("speechgl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_text(path, text: str) -> None:
    path = Path(path)
    if path.parent != Path("."):
        ensure_dir(path.parent)
    path.write_text(text)


def cmd_synth(args) -> int:
    manifest = corpus.load_manifest(args.manifest)
    out = Path(args.out_dir) if args.out_dir else corpus.default_data_root() / "desk"
    corpus.build_dataset(manifest, out)
    n = sum(len(m) for m in manifest.splits.values())
    log.info("wrote %d utterance triples to %s", n, out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out_dir = ensure_dir(args.out_dir or cfg.out_dir)
    prepared = load_prepared(cfg, cfg.train_split)

    def progress(epoch, loss):
        log.info("epoch %d loss %.6g", epoch, loss)

    result = train_on(cfg, prepared, on_epoch=progress)
    meta = {"stft": cfg.stft.to_dict(), "loss": cfg.train.loss,
            "loss_params": asdict(cfg.train.loss_params), "seed": cfg.train.seed}
    save_checkpoint(result.net, out_dir / "model.npz", metadata=meta)
    _write_text(out_dir / "loss_log.csv", loss_log_csv(result.history))
    log.info("checkpoint: %s", out_dir / "model.npz")
    return EXIT_OK


def _stft_for_mode(mode: str, sample_rate: int) -> StftConfig:
    if mode.startswith("model:"):
        meta = checkpoint_metadata(mode.split(":", 1)[1])
        if "stft" in meta:
            return StftConfig(**meta["stft"])
    return StftConfig.for_rate(sample_rate)


def cmd_enhance(args) -> int:
    noisy = read_wav(args.input)
    mask_fn, needs_oracle = resolve_mode(args.mode, args.mu, args.gamma, args.alpha)
    if needs_oracle and not (args.clean and args.noise):
        raise UsageError(f"mode {args.mode!r} needs --clean and --noise oracle files")
    config = _stft_for_mode(args.mode, noisy.sample_rate)
    X = stft(noisy, config)
    clean = stft(read_wav(args.clean), config) if args.clean else X
    noise = stft(read_wav(args.noise), config) if args.noise else X
    if clean.shape != X.shape or noise.shape != X.shape:
        raise SpeechGLError("oracle files must match the input length")
    utt = corpus.Utterance("input", "", float("nan"), "", noisy, noisy, noisy)
    mask = mask_fn(PreparedUtterance(utt, X, clean, noise))
    write_wav(args.output, enhance(X, mask))
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.mode == "sweep":
        if not args.config:
            raise UsageError("mode 'sweep' needs --config")
        cfg = load_config(args.config)
        cfg = replace(cfg, dataset=Path(args.dataset))
        train_set = load_prepared(cfg, cfg.train_split)
        eval_set = load_prepared(cfg, args.split or cfg.eval_split)
        points = run_sweep(cfg, train_set, eval_set, log=lambda p: log.info(
            "gamma=%g beta0=%g dB mu=%g: NA %.2f SA %.2f SDR %.2f", p.gamma, p.beta0_db, p.mu,
            p.scores.na, p.scores.sa, p.scores.sdr))
        _write_text(args.report, sweep_csv(points))
        return EXIT_OK
    mask_fn, _ = resolve_mode(args.mode, args.mu, args.gamma, args.alpha)
    utts = corpus.load_split(args.dataset, args.split or "test")
    config = _stft_for_mode(args.mode, utts[0].noisy.sample_rate)
    rows = evaluate(prepare(utts, config), mask_fn)
    _write_text(args.report, report_csv(rows))
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        gammas = tuple(float(g) for g in args.gammas.split(","))
    except ValueError:
        raise UsageError(f"bad --gammas {args.gammas!r}") from None
    rows = verification.run_all(quick=args.quick, gammas=gammas)
    path = Path(args.report)
    if path.parent != Path("."):
        ensure_dir(path.parent)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=verification.FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(r.as_dict() for r in rows)
    failed = [r for r in rows if r.hard_failure]
    for r in failed:
        log.error("FAIL %s %s: %s vs %s", r.check, r.params, r.value, r.expected)
    log.info("%d checks, %d hard failures", len(rows), len(failed))
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="speechgl", description="Mask-based speech enhancement with residual-noise control.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="synthesize a dataset from a manifest")
    s.add_argument("manifest", nargs="?", default="desk", help="manifest TOML, or 'desk' for the bundled one")
    s.add_argument("out_dir", nargs="?", help="default: $SPEECHGL_DATA_ROOT/desk")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a mask estimator")
    t.add_argument("config")
    t.add_argument("--out-dir")
    t.set_defaults(func=cmd_train)

    def gain_flags(q):
        q.add_argument("--mu", type=float, default=1.0)
        q.add_argument("--gamma", type=float, default=2.0)
        q.add_argument("--alpha", type=float, default=1.0)

    e = sub.add_parser("enhance", help="enhance one WAV file")
    e.add_argument("input")
    e.add_argument("output")
    e.add_argument("--mode", required=True, help="wiener | parametric | identity | model:CHECKPOINT")
    e.add_argument("--clean", help="oracle clean WAV (oracle modes)")
    e.add_argument("--noise", help="oracle noise WAV (oracle modes)")
    gain_flags(e)
    e.set_defaults(func=cmd_enhance)

    v = sub.add_parser("eval", help="score a dataset split, or run a parameter sweep")
    v.add_argument("dataset")
    v.add_argument("mode", help="wiener | parametric | identity | model:CHECKPOINT | sweep")
    v.add_argument("report")
    v.add_argument("--split")
    v.add_argument("--config", help="experiment config with a [sweep] table (mode 'sweep')")
    gain_flags(v)
    v.set_defaults(func=cmd_eval)

    r = sub.add_parser("verify", help="run the derivation checks")
    r.add_argument("report")
    r.add_argument("--quick", action="store_true", help="1e5 Monte-Carlo draws instead of 1e6")
    r.add_argument("--gammas", default="1,2,3")
    r.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, InvalidConfigError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (SpeechGLError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
