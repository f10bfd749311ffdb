"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import socket
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import scene
from .align import AlignConfig, align_instance
from .enhance import EnhanceTrainConfig, Enhancer, train_enhancer
from .pipeline import (Pipeline, PipelineToggles, consistency_of, enhancer_domains,
                       evaluate_cross_position, featurize, toggles_echo)
from .radar import RadarConfig, load_config
from .recognize import BackboneNet, TrainConfig, train_classifier
from .service import StreamConfig, receive_messages, serve_stream
from .spectro import build_set, dump_set

log = logging.getLogger("mmgesture")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class DataError(Exception):
    pass


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positions(text: str) -> list[str]:
    names = [p.strip() for p in text.split(",") if p.strip()]
    unknown = [p for p in names if p not in scene.DEFAULT_POSITIONS]
    if not names or unknown:
        raise argparse.ArgumentTypeError(f"unknown positions: {text!r}")
    return names


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmgesture", description="Room-scale mmWave gesture pipeline")
    p.add_argument("--config", help="radar config file (key = value lines)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--positions", type=_positions, default=list(scene.DEFAULT_POSITIONS))
    s.add_argument("--repetitions", type=int, default=10)
    s.add_argument("--participants", type=int, default=5)
    s.add_argument("--random", type=int, default=0, metavar="N",
                   help="write N random-placement instances instead of fixed positions")
    s.add_argument("--noiseless", action="store_true")

    s = sub.add_parser("align", help="align every instance of a dataset")
    s.add_argument("--data", required=True)

    s = sub.add_parser("spectro", help="spectrogram utilities")
    ss = s.add_subparsers(dest="spectro_command", required=True, parser_class=_Parser)
    d = ss.add_parser("dump", help="write spectrogram text matrices")
    d.add_argument("--data", required=True)
    d.add_argument("--id", action="append", help="instance id (repeatable; default all)")
    d.add_argument("--bins", type=int, default=64)
    d.add_argument("--aligned", action="store_true", help="align before binning")

    s = sub.add_parser("train-enhancer", help="train the sparse->dense translator")
    s.add_argument("--data", required=True)
    s.add_argument("--iterations", type=int, default=200)
    s.add_argument("--lam", type=float, default=10.0)
    s.add_argument("--lr", type=float, default=None)

    for name, text in (("train-classifier", "train the gesture classifier"),
                       ("eval", "cross-position accuracy and feature consistency")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--data", required=True)
        s.add_argument("--positions-train", type=_positions, default=["P1", "P3", "P5"])
        s.add_argument("--epochs", type=int, default=30)
        s.add_argument("--enhancer", help="enhancer parameter file (enables enhancement)")
        s.add_argument("--ablate", action="append", choices=("align", "enhance", "attention"),
                       default=[], help="switch a pipeline stage off (repeatable)")
    s.add_argument("--positions-test", type=_positions, default=["P2", "P4", "P6"])
    s.add_argument("--random-positions", type=int, default=0, metavar="N")
    s.add_argument("--model", help="evaluate this classifier instead of training one")

    s = sub.add_parser("serve", help="stream predictions over UDP")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True, help="dataset whose frames are replayed")
    s.add_argument("--id", action="append", help="instance id(s) to replay (default all)")
    s.add_argument("--enhancer")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=9870)
    s.add_argument("--window", type=int, default=32)
    s.add_argument("--hop", type=int, default=8)
    s.add_argument("--floor", type=float, default=0.0)
    s.add_argument("--frame-interval", type=float, default=0.0)
    s.add_argument("--max-messages", type=int)

    s = sub.add_parser("probe", help="print prediction datagrams received on a port")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=9870)
    s.add_argument("--count", type=int)
    s.add_argument("--timeout", type=float, default=5.0)
    return p


# ---------------------------------------------------------------------------


def _radar(args) -> RadarConfig:
    if not args.config:
        return RadarConfig()
    try:
        return load_config(args.config)
    except (OSError, ValueError, TypeError) as exc:
        raise DataError(f"cannot read config {args.config}: {exc}") from exc


def _load(root, ids=None) -> list:
    try:
        pairs = list(scene.load_dataset(root))
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load dataset {root}: {exc}") from exc
    if ids:
        pairs = [p for p in pairs if p[0]["id"] in set(ids)]
        if not pairs:
            raise DataError(f"none of the requested ids are in {root}")
    if not pairs:
        raise DataError(f"dataset {root} is empty")
    return pairs


def _toggles(args) -> PipelineToggles:
    return PipelineToggles(align="align" not in args.ablate,
                           enhance=bool(args.enhancer) and "enhance" not in args.ablate,
                           attention="attention" not in args.ablate)


def _pipeline(toggles: PipelineToggles, config, enhancer_path=None) -> Pipeline:
    enh = None
    if toggles.enhance:
        try:
            enh = Enhancer.load(enhancer_path).E
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot load enhancer {enhancer_path}: {exc}") from exc
    return Pipeline(toggles, config=config, enhancer=enh)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args, config):
    out = _out(args)
    sim = scene.SimOptions.noiseless() if args.noiseless else scene.SimOptions()
    if args.random:
        (out / "instances").mkdir(exist_ok=True)
        records = []
        for rec, inst in scene.generate_random_instances(args.random, args.seed, config, sim):
            scene.write_instance(out / rec["path"], inst)
            records.append(rec)
        scene.write_manifest(out, records)
    else:
        spec = scene.DatasetSpec({k: scene.DEFAULT_POSITIONS[k] for k in args.positions},
                                 repetitions=args.repetitions, participants=args.participants,
                                 seed=args.seed, sim=sim)
        records = scene.gen_dataset(spec, out, config)
    print(f"wrote {len(records)} instances to {out}")


def cmd_align(args, config):
    pairs = _load(args.data)
    out = _out(args)
    (out / "instances").mkdir(exist_ok=True)
    records = []
    with open(out / "alignment.jsonl", "w") as fh:
        for rec, inst in pairs:
            aligned, params = align_instance(inst, AlignConfig(), config)
            scene.write_instance(out / rec["path"], aligned)
            records.append(rec)
            fh.write(json.dumps({"id": rec["id"], **asdict(params)}) + "\n")
    scene.write_manifest(out, records)
    print(f"aligned {len(records)} instances into {out}")


def cmd_spectro(args, config):
    pairs = _load(args.data, args.id)
    out = _out(args)
    pipe = Pipeline(PipelineToggles(align=args.aligned), config=config, bins=args.bins)
    n = 0
    for rec, inst in pairs:
        if args.aligned:
            specs = pipe.spectrograms(inst)
        else:
            specs = build_set(inst.frames, args.bins, config=config)
        n += len(dump_set(specs, out, prefix=f"{rec['id']}_"))
    print(f"wrote {n} spectrogram files to {out}")


def cmd_train_enhancer(args, config):
    data = featurize(_load(args.data), Pipeline(PipelineToggles(), config=config))
    out = _out(args)
    sparse, dense, _ = enhancer_domains(data)
    if not len(sparse) or not len(dense):
        raise DataError("dataset lacks sparse (>= 4.5 m) or dense (<= 2.5 m frontal) instances")
    cfg = EnhanceTrainConfig(lam=args.lam, iterations=args.iterations, seed=args.seed)
    if args.lr is not None:
        cfg = replace(cfg, learning_rate=args.lr)
    enh = train_enhancer(sparse, dense, cfg)
    enh.save(out / "enhancer.params")
    with open(out / "enhancer_history.json", "w") as fh:
        json.dump(enh.history, fh)
    c0, c1 = enh.history["probe_cyc"]
    print(f"cycle_loss_initial={c0:.6f}\ncycle_loss_final={c1:.6f}")


def _train_cfg(args, toggles) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, seed=args.seed, attention=toggles.attention)


def cmd_train_classifier(args, config):
    toggles = _toggles(args)
    data = featurize(_load(args.data), _pipeline(toggles, config, args.enhancer))
    m = np.isin(data.positions, args.positions_train) & ~data.test
    if not m.any():
        raise DataError("no training instances at the requested positions")
    net = train_classifier(data.x[m], data.labels[m], _train_cfg(args, toggles))
    out = _out(args)
    net.meta = toggles_echo(toggles)
    net.save(out / "classifier.params")
    with open(out / "training_curves.json", "w") as fh:
        json.dump(net.history, fh)
    loss = net.history["loss"]
    print(f"final_loss={loss[-1] if loss else float('nan'):.6f}")


def cmd_eval(args, config):
    toggles = _toggles(args)
    pipe = _pipeline(toggles, config, args.enhancer)
    data = featurize(_load(args.data), pipe)
    model = None
    if args.model:
        try:
            model = BackboneNet.load(args.model)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot load model {args.model}: {exc}") from exc
    rnd = None
    if args.random_positions:
        rnd = featurize(list(scene.generate_random_instances(args.random_positions, args.seed + 1,
                                                             config)), pipe)
    report, model = evaluate_cross_position(model, data, args.positions_train, args.positions_test,
                                            _train_cfg(args, toggles), rnd, toggles_echo(toggles))
    text = report.to_text()
    present = set(data.positions.tolist())
    if len(present) >= 2:
        cm = consistency_of(model, data, only_test=True)
        text += "".join(f"consistency.{k}={v:.6f}\n" for k, v in asdict(cm).items())
    out = _out(args)
    (out / "report.txt").write_text(text)
    (out / "report.tsv").write_text(report.to_table("ours" if toggles.align else "raw"))
    sys.stdout.write(text)


def cmd_serve(args, config):
    try:
        model = BackboneNet.load(args.model)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load model {args.model}: {exc}") from exc
    align = model.meta.get("align", "1") == "1"
    toggles = PipelineToggles(align=align, enhance=bool(args.enhancer))
    pipe = _pipeline(toggles, config, args.enhancer)
    frames = [f for _, inst in _load(args.data, args.id) for f in inst.frames]
    try:
        cfg = StreamConfig(args.window, args.hop, args.host, args.port, args.floor,
                           frame_interval=args.frame_interval)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    stats = serve_stream(iter(frames), model, pipe, cfg, max_messages=args.max_messages)
    lat = 1e3 * np.mean(stats.latencies) if stats.latencies else float("nan")
    print(f"windows={stats.windows} sent={stats.sent} suppressed={stats.suppressed} "
          f"dropped={stats.dropped} mean_latency_ms={lat:.2f}")


def cmd_probe(args, config):
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.bind((args.host, args.port))
        for msg in receive_messages(sock, args.count, args.timeout):
            print(f"seq={msg.sequence} ts_us={msg.timestamp_us} label={msg.label} "
                  f"name={scene.CLASS_NAMES[msg.label]} confidence={msg.confidence:.4f}",
                  flush=True)
    finally:
        sock.close()


COMMANDS = {
    "simulate": cmd_simulate,
    "align": cmd_align,
    "spectro": cmd_spectro,
    "train-enhancer": cmd_train_enhancer,
    "train-classifier": cmd_train_classifier,
    "eval": cmd_eval,
    "serve": cmd_serve,
    "probe": cmd_probe,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args, _radar(args))
    except UsageError as exc:
        print(f"mmgesture: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"mmgesture: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, RuntimeError, OSError, ValueError) as exc:
        print(f"mmgesture: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
