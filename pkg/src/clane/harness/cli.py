"""Command-line entry point.

Every subcommand reads an optional INI file (``--config``) and repeated
``--set section.key=value`` overrides. Reports carry no timestamps or host
details, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import statistics
import sys
from pathlib import Path

import numpy as np

from ..aggnorm import lut_dump
from ..events import (EventValidationError, FrameSequence, ParseError, bin_to_frames, encode_events,
                      frames_from_text, frames_to_text, read_events)
from ..ops import OpCounts
from ..snn import fuse_network, quantize_network
from ..weights import WeightFileError, convert_weights, load_network, save_network
from .config import ConfigError, load_config
from .io import read_features, read_manifest, write_features, write_manifest
from .learners import LEARNERS, make_learner
from .pipeline import clip_features, count_ops, default_extractor
from .protocol import run_incremental, split_classes
from .synth import class_motion, render_bar_clip, synth_events, synth_features

EXIT_USAGE = 2


class CliError(Exception):
    pass


def _parse_window(token: str) -> int:
    token = token.strip().lower()
    for suffix, scale in (("us", 1), ("ms", 1000), ("s", 1_000_000)):
        if token.endswith(suffix):
            try:
                value = float(token[: -len(suffix)])
            except ValueError:
                break
            us = value * scale
            if us <= 0 or us != int(us):
                break
            return int(us)
    raise CliError(f"bad window {token!r}; use e.g. 40ms, 2000us")


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _table(header, rows) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _extractor(args, conf, cfg):
    """Quantized network plus its float source (``None`` when loaded quantized)."""
    if getattr(args, "weights", None):
        path = Path(args.weights)
        if not path.exists():
            raise CliError(f"weight file not found: {path}")
        net = load_network(path)
        if net.quantized:
            return net, None
        fused = fuse_network(net) if any(layer.bn is not None for layer in net.layers) else net
        return quantize_network(fused, conf["extractor"]["weight_bits"]), fused
    fused = fuse_network(default_extractor(conf["extractor"]["seed"], cfg))
    return quantize_network(fused, conf["extractor"]["weight_bits"]), fused


# ---- subcommands -----------------------------------------------------------


def cmd_synth(args, conf) -> None:
    spec = conf.synth()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_features(out / "features.feat", synth_features(spec))
    print(f"wrote {out / 'features.feat'} ({spec.num_classes} classes x {spec.samples_per_class})")
    if spec.clips_per_class > 0:
        cfg = conf.binning()
        ev_dir = out / "events"
        ev_dir.mkdir(exist_ok=True)
        entries = []
        for c, clips in synth_events(spec, cfg).items():
            for i, stream in enumerate(clips):
                path = ev_dir / f"c{c:03d}_{i:03d}.evt"
                path.write_bytes(encode_events(stream))
                entries.append((c, path))
        write_manifest(out / "manifest.tsv", entries)
        print(f"wrote {len(entries)} event clips and {out / 'manifest.tsv'}")


def _load_clip(path: Path, cfg):
    if not path.exists():
        raise CliError(f"input file not found: {path}")
    if path.suffix == ".frames":
        return frames_from_text(path.read_text())
    stream = read_events(path)
    cfg.check_sensor(stream.width, stream.height)
    return bin_to_frames(stream, cfg)


def cmd_ingest(args, conf) -> None:
    cfg = conf.binning()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    sources = read_manifest(args.manifest) if args.manifest else [(-1, Path(p)) for p in args.events]
    if not sources:
        raise CliError("nothing to ingest; pass event files or --manifest")
    for cid, path in sources:
        frames = _load_clip(path, cfg)
        dst = out / (path.stem + ".frames")
        dst.write_text(frames_to_text(frames))
        entries.append((cid, dst))
    if args.manifest:
        write_manifest(out / "manifest.tsv", entries)
    print(f"wrote {len(entries)} frame files to {out}")


def cmd_extract(args, conf) -> None:
    cfg = conf.binning()
    manifest = Path(args.manifest)
    if not manifest.exists():
        raise CliError(f"manifest not found: {manifest}")
    qnet, fnet = _extractor(args, conf, cfg)
    path = conf["extractor"]["path"]
    if path == "float" and fnet is None:
        raise CliError("float features need a float weight file")
    by_class: dict[int, list[FrameSequence]] = {}
    for cid, p in read_manifest(manifest):
        by_class.setdefault(cid, []).append(_load_clip(p, cfg))
    net = qnet if path == "fixed" else fnet
    feats = clip_features(by_class, net, path=path, binary_input=conf["extractor"]["binary_input"])
    # a clip without output spikes has no direction to normalize; drop it here
    empty = sum(int((~v.any(axis=1)).sum()) for v in feats.values())
    feats = {c: v[v.any(axis=1)] for c, v in feats.items()}
    feats = {c: v for c, v in feats.items() if len(v)}
    if empty:
        print(f"clane extract: dropped {empty} clip(s) with no output spikes", file=sys.stderr)
    if not feats:
        raise CliError("every clip produced an all-zero feature vector")
    write_features(args.out, feats)
    print(f"wrote {args.out} ({sum(len(v) for v in feats.values())} samples, D={net.feature_dim})")


def _select_classes(feats: dict, conf) -> dict:
    if conf["protocol"]["class_set"] == "all":
        return feats
    if conf["protocol"]["class_set"] != "holdout":
        raise ConfigError("[protocol] class_set must be 'all' or 'holdout'")
    try:
        split = split_classes(max(feats) + 1, conf["protocol"]["holdout_rule"])
    except ValueError as e:
        raise ConfigError(f"[protocol] {e}") from None
    return {c: feats[c] for c in split.holdout if c in feats}


def _learner_names(spec: str) -> list[str]:
    names = list(LEARNERS) if spec == "all" else [s.strip() for s in spec.split(",") if s.strip()]
    bad = [n for n in names if n not in LEARNERS]
    if bad or not names:
        raise CliError(f"unknown learner(s) {bad}; choose from {', '.join(LEARNERS)} or 'all'")
    return names


def cmd_learn(args, conf) -> None:
    path = Path(args.features)
    if not path.exists():
        raise CliError(f"feature file not found: {path}")
    try:
        feats = _select_classes(read_features(path), conf)
    except ValueError as e:
        raise CliError(str(e)) from None
    if not feats:
        raise CliError("no classes selected")
    dim = next(iter(feats.values())).shape[1]
    norm, kwargs = conf.norm(), conf.learner_kwargs()
    seed0, runs = conf["protocol"]["seed"], conf["protocol"]["runs"]
    if runs < 1:
        raise ConfigError("[protocol] runs must be >= 1")

    reports = []
    for name in _learner_names(args.learner):
        for i in range(runs):
            pcfg = conf.protocol(seed0 + i)
            learner = make_learner(name, dim, seed=pcfg.seed, num_classes=len(feats), norm=norm, **kwargs)
            try:
                reports.append(run_incremental(pcfg, learner, feats, name))
            except ValueError as e:
                raise CliError(str(e)) from None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = conf.values
    _write_jsonl(out / "report.jsonl", [dict(r.to_dict(), run_config=echo) for r in reports])

    by_name: dict[str, list] = {}
    for r in reports:
        by_name.setdefault(r.learner, []).append(r)
    header = ["learner", "runs", "final_mean", "final_std", "params", "prototypes", "max_forgetting_mean"]
    rows = []
    for name, rs in by_name.items():
        finals = [r.final_accuracy for r in rs]
        std = statistics.pstdev(finals) if len(finals) > 1 else 0.0
        protos = [r.prototypes for r in rs if r.prototypes is not None]
        rows.append([name, len(rs), f"{statistics.fmean(finals):.4f}", f"{std:.4f}",
                     rs[0].parameter_count, f"{statistics.fmean(protos):.1f}" if protos else "",
                     f"{statistics.fmean(max(r.forgetting.values()) for r in rs):.4f}"])
    _write_csv(out / "summary.csv", header, rows)
    steps = len(reports[0].cumulative)
    curve_rows = [[name] + [f"{statistics.fmean(r.cumulative[k] for r in rs):.4f}" for k in range(steps)]
                  for name, rs in by_name.items()]
    _write_csv(out / "curves.csv", ["learner"] + [f"step{k + 1}" for k in range(steps)], curve_rows)
    text = _table(header, rows) + "\nmean cumulative accuracy per step\n" + _table(
        ["learner"] + [str(k + 1) for k in range(steps)], curve_rows)
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)


def cmd_bench(args, conf) -> None:
    cfg = conf.binning()
    windows = [_parse_window(w) for w in args.windows.split(",") if w.strip()]
    if not windows:
        raise CliError("no windows given")
    # without a weight file, each window gets its own calibrated extractor
    # (one network per input frequency); a given weight file is shared
    shared = _extractor(args, conf, cfg)[0] if args.weights else None
    if args.clip:
        p = Path(args.clip)
        if not p.exists():
            raise CliError(f"clip not found: {p}")
        stream = read_events(p)
        cfg.check_sensor(stream.width, stream.height)
        t0 = 0
        t1 = int(stream.t[-1]) + 1 if len(stream) else 1
    else:
        spec = conf.synth()
        angle, speed = class_motion(0, spec.num_classes, spec.speed)
        stream = render_bar_clip(np.random.default_rng(spec.seed), angle, speed, spec, cfg)
        t0, t1 = 0, spec.clip_us
    records, rows = [], []
    binary = conf["extractor"]["binary_input"]
    for w in windows:
        wcfg = cfg.with_window(w)
        qnet = shared or _extractor(args, conf, wcfg)[0]
        ops: OpCounts = count_ops(bin_to_frames(stream, wcfg, t_start=t0, t_end=t1), qnet,
                                  norm=conf.norm(), binary_input=binary)
        d = ops.to_dict()
        records.append({"window_us": w, "events": len(stream), **d})
        rows.append([w, ops.timesteps, ops.neuron_updates, ops.synops, ops.spikes, ops.saturations])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "bench.jsonl", records)
    header = ["window_us", "timesteps", "neuron_updates", "synops", "spikes", "saturations"]
    _write_csv(out / "bench.csv", header, rows)
    base = rows[0]
    ratio_rows = [[r[0], f"{r[1] / base[1]:.3f}", f"{r[2] / base[2]:.3f}",
                   f"{r[3] / base[3]:.3f}" if base[3] else ""] for r in rows]
    text = _table(header, rows) + "\nrelative to first window\n" + _table(
        ["window_us", "timesteps", "neuron_updates", "synops"], ratio_rows)
    (out / "bench.txt").write_text(text)
    sys.stdout.write(text)


def cmd_lut_dump(args, conf) -> None:
    text = lut_dump(conf.norm())
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_convert_weights(args, conf) -> None:
    if not Path(args.src).exists():
        raise CliError(f"weight file not found: {args.src}")
    convert_weights(args.src, args.dst, conf["extractor"]["weight_bits"])
    print(f"wrote {args.dst}")


def cmd_init_weights(args, conf) -> None:
    save_network(default_extractor(conf["extractor"]["seed"], conf.binning()), args.out)
    print(f"wrote {args.out}")


def cmd_write_config(args, conf) -> None:
    text = conf.to_ini()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


# ---- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [ingest] [extractor] [norm] [learner] [protocol] [synth]")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")

    parser = argparse.ArgumentParser(prog="clane", description="Event-camera SNN continual-learning toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic features (and event clips)")
    p.add_argument("--out", default="clane-data")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="bin event files into cached frame files")
    p.add_argument("events", nargs="*")
    p.add_argument("--manifest")
    p.add_argument("--out", default="clane-frames")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("extract", parents=[common], help="run the extractor over a manifest, write FEAT")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", help="SNNW file; default is the seeded synthetic extractor")
    p.add_argument("--out", default="features.feat")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("learn", parents=[common], help="class-incremental runs over a FEAT file")
    p.add_argument("--features", default="clane-data/features.feat")
    p.add_argument("--learner", default="all", help=f"comma list of {', '.join(LEARNERS)} or 'all'")
    p.add_argument("--shots", type=int, help="shots per class (0 = every training sample)")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int, help="number of seeds (seed, seed+1, ...)")
    p.add_argument("--out", default="clane-report")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("bench", parents=[common], help="op counts of one clip across window lengths")
    p.add_argument("--windows", default="40ms,10ms,2ms")
    p.add_argument("--weights")
    p.add_argument("--clip", help="event file; default is a synthetic moving-bar clip")
    p.add_argument("--out", default="clane-bench")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("lut-dump", parents=[common], help="print the inverse-sqrt table (index,entry)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_lut_dump)

    p = sub.add_parser("convert-weights", parents=[common], help="fuse BN and quantize a float SNNW file")
    p.add_argument("src")
    p.add_argument("dst")
    p.set_defaults(func=cmd_convert_weights)

    p = sub.add_parser("init-weights", parents=[common], help="write the seeded synthetic float extractor")
    p.add_argument("--out", default="extractor.snnw")
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("write-config", parents=[common], help="print the effective configuration as INI")
    p.add_argument("--out")
    p.set_defaults(func=cmd_write_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    for flag, key in (("shots", "protocol.shots"), ("seed", "protocol.seed"), ("runs", "protocol.runs")):
        if getattr(args, flag, None) is not None:
            overrides.append(f"{key}={getattr(args, flag)}")
    try:
        if args.config and not Path(args.config).exists():
            raise CliError(f"config file not found: {args.config}")
        conf = load_config(args.config, overrides)
        args.func(args, conf)
    except (CliError, ConfigError, WeightFileError) as e:
        print(f"clane {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, EventValidationError) as e:
        print(f"clane {args.command}: invalid input: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
