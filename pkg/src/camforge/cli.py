"""Command-line entry point: ``camforge <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from camforge.errors import CamforgeError, ConfigurationError, InputError

DEFAULT_SEED = 0
log = logging.getLogger("camforge")


def _model_config(args):
    from camforge.model import get_preset, load_config

    base = get_preset(args.preset)
    return load_config(args.config, base) if getattr(args, "config", None) else base


def _load_or_build(args):
    from camforge.model import build_model, load_weights

    config = _model_config(args)
    if getattr(args, "weights", None):
        return load_weights(args.weights, config)
    return build_model(config, seed=args.seed)


def _features_for(path: Path):
    from camforge.core import Tensor
    from camforge.features import fbank, read_wav
    from camforge.model import read_tensor_records

    if path.suffix.lower() == ".wav":
        return fbank(read_wav(path))
    records = read_tensor_records(path)
    if len(records) != 1:
        raise InputError(f"{path}: feature file must hold exactly one tensor")
    return Tensor(next(iter(records.values())))


def cmd_embed(args) -> int:
    from camforge.model import extract_embedding, write_tensor_records

    model = _load_or_build(args)
    store = {}
    for name in args.inputs:
        path = Path(name)
        if path.stem in store:
            raise InputError(f"duplicate utterance id {path.stem!r}")
        store[path.stem] = extract_embedding(_features_for(path), model).data
        log.info("embedded %s", path)
    write_tensor_records(args.out, store)
    return 0


def cmd_fbank(args) -> int:
    from camforge.features import fbank, read_wav
    from camforge.model import write_tensor_records

    write_tensor_records(args.out, {Path(args.input).stem: fbank(read_wav(args.input)).data})
    return 0


def cmd_score(args) -> int:
    from camforge.model import read_tensor_records
    from camforge.scoring import format_scores, parse_enrollments, parse_trials, score_trials

    trials = parse_trials(args.trials)
    store = {}
    for path in args.embeddings:
        store.update(read_tensor_records(path))
    enroll = parse_enrollments(args.enroll) if args.enroll else None
    scored = score_trials(trials, store, enroll)
    Path(args.out).write_text(format_scores(scored))
    return 0


def cmd_eval(args) -> int:
    from camforge.scoring import attach_scores, compute_eer, compute_mindcf, parse_scores, parse_trials

    trials = attach_scores(parse_trials(args.trials), parse_scores(args.scores))
    eer = compute_eer(trials)["eer"]
    dcf = compute_mindcf(trials, args.p_target, args.c_miss, args.c_fa)["mindcf"]
    print(f"EER {eer:.4f} minDCF {dcf:.4f}")
    return 0


def cmd_analyze(args) -> int:
    from camforge.analysis import count_flops, flops_convention_sweep, frames_for_seconds
    from camforge.model import REFERENCE_PARAMS_M, build_model

    config = _model_config(args)
    model = build_model(config, seed=args.seed)
    report = count_flops(model, frames_for_seconds(args.duration_seconds), args.duration_seconds)
    reference = REFERENCE_PARAMS_M.get(config.name)
    if reference:
        delta = report.total_params / 1e6 / reference - 1.0
        report.notes.append(f"reference params {reference:.2f} M, delta {100 * delta:+.2f}%")
    if args.sweep:
        points, best = flops_convention_sweep(model)
        for p in points:
            report.notes.append(
                f"sweep {p['seconds']:g} s ({p['frames']} frames) {p['convention']}: "
                f"{p['giga']:.3f} G ({100 * p['rel_delta']:+.1f}% vs 1.72 G)"
            )
        report.notes.append(f"closest convention: {best['convention']} at {best['seconds']:g} s")
    text = report.to_tsv() if args.format == "tsv" else report.to_table()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_bench(args) -> int:
    from camforge.analysis import benchmark_rtf, environment_report

    model = _load_or_build(args)
    result = benchmark_rtf(
        model, args.duration_seconds, args.repeats, include_features=args.include_features, seed=args.seed
    )
    print(f"environment: {environment_report()}")
    print(f"threads {result.threads}")
    print(result.summary())
    return 0


def cmd_train_toy(args) -> int:
    from camforge.features import fbank, read_wav
    from camforge.model import build_model, save_weights
    from camforge.training import ScheduleConfig, load_manifest, toy_fit

    entries = load_manifest(args.manifest)
    speakers = sorted({spk for _, spk in entries})
    index = {spk: i for i, spk in enumerate(speakers)}
    dataset = [(fbank(read_wav(p)).data, index[spk]) for p, spk in entries]
    model = build_model(_model_config(args), seed=args.seed)
    schedule = ScheduleConfig(warmup_steps=args.warmup_steps, total_steps=args.steps)
    result = toy_fit(model, dataset, schedule, args.steps, seed=args.seed)
    trace = "".join(f"{i}\t{lr:.6g}\t{loss:.6f}\n" for i, (lr, loss) in enumerate(zip(result.lrs, result.losses)))
    if args.loss_trace:
        Path(args.loss_trace).write_text(trace)
    else:
        sys.stdout.write(trace)
    print(f"final loss {result.losses[-1]:.6f} accuracy {result.accuracy:.4f}")
    save_weights(model, args.out)
    return 0


def cmd_init(args) -> int:
    from camforge.model import build_model, save_weights

    save_weights(build_model(_model_config(args), seed=args.seed), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camforge", description=__doc__)
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread override (bench always uses 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_flags(p, preset="campp", weights=True):
        p.add_argument("--preset", default=preset)
        p.add_argument("--config", help="key = value model config overriding the preset")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        if weights:
            p.add_argument("--weights", help="CAMW weight file (else seed-initialised)")

    p = sub.add_parser("embed", help="WAV or feature files -> embedding file")
    model_flags(p)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("fbank", help="WAV -> feature tensor file")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fbank)

    p = sub.add_parser("score", help="embedding files + trials -> score file")
    p.add_argument("embeddings", nargs="+")
    p.add_argument("--trials", required=True)
    p.add_argument("--enroll", help="lines 'enroll_id utt_id ...' to average")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="score file + trials -> EER / minDCF")
    p.add_argument("--scores", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--p-target", type=float, default=0.01)
    p.add_argument("--c-miss", type=float, default=1.0)
    p.add_argument("--c-fa", type=float, default=1.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="parameter / FLOP report for a preset")
    model_flags(p, weights=False)
    p.add_argument("--duration-seconds", type=float, default=1.0)
    p.add_argument("--format", choices=("table", "tsv"), default="table")
    p.add_argument("--sweep", action="store_true", help="append the duration/convention FLOP sweep")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="single-thread real-time factor")
    model_flags(p)
    p.add_argument("--duration-seconds", type=float, default=10.0)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--include-features", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train-toy", help="overfit a small labelled set")
    model_flags(p, preset="tiny", weights=False)
    p.add_argument("manifest", help="directory of <spk>_<utt>.wav or 'path<TAB>speaker' file")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--warmup-steps", type=int, default=20)
    p.add_argument("--loss-trace")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("init", help="seed-initialised weight file")
    model_flags(p, weights=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)
    return parser


def _validate(args) -> None:
    if getattr(args, "repeats", 3) < 3:
        raise ConfigurationError("--repeats must be >= 3")
    if getattr(args, "duration_seconds", 1.0) <= 0:
        raise ConfigurationError("--duration-seconds must be positive")
    if getattr(args, "steps", 1) < 1:
        raise ConfigurationError("--steps must be >= 1")
    if args.threads is not None and args.threads < 1:
        raise ConfigurationError("--threads must be >= 1")


def main(argv=None) -> int:
    level = os.environ.get("CAMFORGE_LOG", "WARNING").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else "WARNING",
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        _validate(args)
        if args.threads and args.command != "bench":
            from threadpoolctl import threadpool_limits

            ctx = threadpool_limits(limits=args.threads)
        else:
            ctx = nullcontext()
        with ctx:
            return args.func(args)
    except CamforgeError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
