"""Command line entry point.

Every command writes a ``manifest.json`` next to its outputs holding the
argv, resolved config, input/output hashes and tool version; ``inrstream
replay MANIFEST`` re-runs it.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .imageio import PPMError, load, save
from .metrics import TrialReport, aggregate, compression_factor, psnr, raw_image_bytes, ssim
from .models import CoordGrid, ModelSpec, render
from .nn import TrainingDiverged
from .rng import GENERATOR, RNG_VERSION
from .robustness import AttackSpec, run_trials
from .stream import (
    QUANT_NAMES,
    Bitstream,
    ChannelConfig,
    ProgressiveDecoder,
    StreamError,
    deserialize,
    progressive_decode,
    serialize,
    transmit,
)
from .trainer import TrainConfig, fit, fit_spinr

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_TRAIN = 3
EXIT_DECODE = 4


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


class Writer:
    """Single sink for every file a command produces, so the manifest stays complete."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.outputs = []

    def path(self, name):
        p = self.out_dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def _track(self, p):
        self.outputs.append(str(p.relative_to(self.out_dir)))
        return p

    def bytes(self, name, data):
        p = self.path(name)
        p.write_bytes(data)
        return self._track(p)

    def text(self, name, text):
        p = self.path(name)
        p.write_text(text, encoding="utf-8")
        return self._track(p)

    def jsonl(self, name, records):
        return self.text(name, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))

    def image(self, name, img):
        p = self.path(name)
        save(img, p)
        return self._track(p)

    def manifest(self, command, argv, config, seeds, inputs):
        record = {
            "command": command,
            "argv": list(argv),
            "config": config,
            "seeds": list(seeds),
            "inputs": {str(p): _sha256(p) for p in inputs},
            "outputs": {o: _sha256(self.out_dir / o) for o in self.outputs},
            "cwd": os.getcwd(),
            "tool_version": __version__,
            "rng": {"generator": GENERATOR, "version": RNG_VERSION},
        }
        p = self.path("manifest.json")
        p.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p


def _spec_from_args(args, family):
    return ModelSpec(family, args.width, args.depth, args.omega0, args.fourier_m, args.fourier_sigma)


def _fit_one(spec, image, config, staged):
    if staged:
        return fit_spinr(spec, image, config)
    return fit(spec, image, config)


def _format_table(rows, header):
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    line = lambda r: "  ".join(str(c).rjust(w) for c, w in zip(r, widths))
    return "\n".join([line(header), line(["-" * w for w in widths])] + [line(r) for r in rows]) + "\n"


def cmd_fit(args, argv):
    image = load(args.image)
    family = "siren" if args.method == "spinr" else args.method
    spec = _spec_from_args(args, family)
    seeds = [args.seed + k for k in range(args.seeds)]
    quant = QUANT_NAMES[args.quant]
    configs = {s: TrainConfig(total_steps=args.steps, lr=args.lr, seed=s) for s in seeds}
    staged = args.method == "spinr"

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        futures = {s: pool.submit(_fit_one, spec, image, configs[s], staged) for s in seeds}
        results = {s: f.result() for s, f in futures.items()}

    writer = Writer(args.out_dir)
    h, w = image.shape[:2]
    reports = []
    for s in seeds:
        res = results[s]
        sub = f"seed{s}/"
        stream = serialize(res.params, spec, quant)
        blob = stream.to_bytes()
        writer.bytes(sub + "model.spnr", blob)
        decoded = deserialize(blob).model
        img = np.clip(render(decoded, CoordGrid(h, w)), 0, 1)
        writer.image(sub + "render.ppm", img)
        writer.text(sub + "loss.csv", "step,loss\n" + "".join(
            f"{k},{v:.9g}\n" for k, v in enumerate(res.loss_curve)))
        if staged:
            for k, st in enumerate(res.stage_renders, start=1):
                writer.image(sub + f"stage{k}.ppm", st)
        report = TrialReport(
            args.method, s, spec.n_params(), psnr(img, image),
            ssim(img, image) if min(h, w) >= 11 else float("nan"),
            compression_factor(raw_image_bytes(h, w), len(blob)),
        )
        if staged:
            report.attacks = {f"stage{k}": v for k, v in enumerate(res.stage_psnr, start=1)}
        reports.append(report)

    writer.jsonl("reports.jsonl", [r.to_dict() for r in reports])
    summary = aggregate(reports)
    rows = [[k, f"{v.mean:.4f}", f"{v.std:.4f}", v.n, v.excluded] for k, v in summary.items()]
    writer.text("summary.txt", f"# method={args.method} runs={len(reports)} std=population\n"
                + _format_table(rows, ["metric", "mean", "std", "n", "excluded"]))
    config = {"spec": spec.to_dict(), "train": vars(configs[seeds[0]]) | {"seed": None},
              "method": args.method, "quant": args.quant}
    writer.manifest("fit", argv, config, seeds, [args.image])
    for r in reports:
        print(f"{r.method} seed={r.seed} params={r.n_params} psnr={r.psnr:.2f} "
              f"ssim={r.ssim:.4f} cf={r.cf:.3f}")
    return EXIT_OK


def _decode_file(path):
    with open(path, "rb") as f:
        return deserialize(f.read())


def cmd_attack(args, argv):
    image = load(args.image)
    model = _decode_file(args.bitstream).model
    attacks = []
    for k in _ints(args.lose_neurons or ""):
        attacks.append(AttackSpec("lose_neurons", k, args.trials, args.seed, args.lose_mode))
    for sigma in _floats(args.noise_sigma or ""):
        attacks.append(AttackSpec("param_noise", sigma, args.trials, args.seed))
    for idx in _ints(args.corrupt_layer or ""):
        attacks.append(AttackSpec("corrupt_layer", idx, args.trials, args.seed))
    if not attacks:
        raise SystemExit("attack: give --lose-neurons, --noise-sigma or --corrupt-layer")

    results = [run_trials(model, image, a) for a in attacks]
    writer = Writer(args.out_dir)
    writer.jsonl("attacks.jsonl", [r.to_dict() for r in results])
    base = results[0]
    rows = [["base", f"{base.base_psnr:.2f}", "0.00", f"{base.base_ssim:.4f}"]]
    rows += [[r.attack.label, f"{r.mean_psnr:.2f}", f"{r.psnr_drop:.2f}", f"{r.mean_ssim:.4f}"]
             for r in results]
    table = _format_table(rows, ["attack", "psnr", "drop", "ssim"])
    writer.text("attacks.txt", f"# trials={args.trials} seed={args.seed}\n" + table)
    writer.manifest("attack", argv, {"trials": args.trials, "attacks": [a.label for a in attacks]},
                    [args.seed], [args.bitstream, args.image])
    print(table, end="")
    return EXIT_OK


def cmd_stream(args, argv):
    with open(args.bitstream, "rb") as f:
        blob = f.read()
    source = deserialize(blob)
    stream = Bitstream(source.spec, source.quant_mode, [source.chunks[c] for c in sorted(source.chunks)])
    if args.truncate_after:
        stream = stream.truncated(args.truncate_after)
    h, w = _output_size(args)
    target = load(args.image) if args.image else None
    writer = Writer(args.out_dir)
    stages = []

    def on_update(result):
        img = np.clip(result.image, 0, 1)
        writer.image(f"stage{result.stage}.ppm", img)
        rec = {"stage": result.stage, "active": list(result.active)}
        if target is not None:
            rec["psnr"] = psnr(img, target)
        stages.append(rec)

    channel = ChannelConfig(args.loss_prob, args.packet_size, args.seed, args.reorder)
    delivery = transmit(stream, channel)
    decoder = ProgressiveDecoder(h, w, on_update=on_update)
    decoder.feed_all(delivery.delivered)
    log_records = [{"event": "channel", "sent": delivery.sent, "delivered": len(delivery.delivered),
                    "dropped": delivery.dropped}] + decoder.log + [{"event": "stage", **s} for s in stages]
    writer.jsonl("delivery.jsonl", log_records)
    config = {"loss_prob": args.loss_prob, "packet_size": args.packet_size,
              "truncate_after": args.truncate_after, "height": h, "width": w}
    inputs = [args.bitstream] + ([args.image] if args.image else [])
    writer.manifest("stream", argv, config, [args.seed], inputs)
    print(f"sent={delivery.sent} delivered={len(delivery.delivered)} "
          f"chunks={sorted(decoder.chunks)} stage={decoder.latest.stage if decoder.latest else 0}")
    if decoder.latest is None:
        print("undecodable: core chunks lost", file=sys.stderr)
        return EXIT_DECODE
    return EXIT_OK


def _output_size(args):
    if args.image:
        img = load(args.image)
        return img.shape[0], img.shape[1]
    return args.height, args.width


def cmd_decode(args, argv):
    with open(args.bitstream, "rb") as f:
        decoded = deserialize(f.read(), allow_partial=True)
    h, w = _output_size(args)
    result = progressive_decode(decoded.chunks, decoded.spec, h, w)
    writer = Writer(args.out_dir)
    writer.image("decoded.ppm", np.clip(result.image, 0, 1))
    writer.manifest("decode", argv, {"height": h, "width": w, "missing": decoded.missing,
                                     "corrupt": decoded.corrupt}, [], [args.bitstream])
    print(f"stage={result.stage} missing={decoded.missing} corrupt={decoded.corrupt}")
    return EXIT_OK


def cmd_report(args, argv):
    reports = []
    for path in sorted(Path(args.run_dir).rglob("reports.jsonl")):
        for line in path.read_text(encoding="utf-8").splitlines():
            d = json.loads(line)
            for k in ("psnr", "ssim", "cf"):
                d[k] = float(d[k])
            reports.append(TrialReport(**d))
    if not reports:
        raise SystemExit(f"no reports.jsonl under {args.run_dir}")
    rows = []
    for method in sorted({r.method for r in reports}):
        summary = aggregate([r for r in reports if r.method == method])
        rows.append([method, summary["psnr"].n, str(summary["psnr"]), str(summary["ssim"]),
                     f"{summary['cf'].mean:.3f}", f"{summary['n_params'].mean / 1000:.2f}K"])
    print(f"# std=population\n" + _format_table(rows, ["method", "runs", "psnr", "ssim", "cf", "params"]), end="")
    return EXIT_OK


def cmd_replay(args, argv):
    record = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    os.chdir(record["cwd"])
    return main(record["argv"])


def build_parser():
    p = argparse.ArgumentParser(prog="inrstream", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="train a network on an image and write its bitstream")
    f.add_argument("image")
    f.add_argument("--method", choices=["siren", "fourier", "spinr"], default="siren")
    f.add_argument("--width", type=int, default=128)
    f.add_argument("--depth", type=int, default=4)
    f.add_argument("--steps", type=int, default=2000)
    f.add_argument("--lr", type=float, default=None)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to run")
    f.add_argument("--workers", type=int, default=1)
    f.add_argument("--omega0", type=float, default=30.0)
    f.add_argument("--fourier-m", type=int, default=128)
    f.add_argument("--fourier-sigma", type=float, default=10.0)
    f.add_argument("--quant", choices=sorted(QUANT_NAMES), default="f32")
    f.add_argument("--out-dir", default="runs/fit")
    f.set_defaults(func=cmd_fit)

    a = sub.add_parser("attack", help="evaluate a bitstream under parameter attacks")
    a.add_argument("bitstream")
    a.add_argument("image")
    a.add_argument("--lose-neurons", help="comma-separated k values")
    a.add_argument("--lose-mode", choices=["incoming", "outgoing", "both"], default="incoming")
    a.add_argument("--noise-sigma", help="comma-separated sigma values")
    a.add_argument("--corrupt-layer", help="comma-separated layer indices")
    a.add_argument("--trials", type=int, default=10)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out-dir", default="runs/attack")
    a.set_defaults(func=cmd_attack)

    s = sub.add_parser("stream", help="simulate lossy transmission and progressive decoding")
    s.add_argument("bitstream")
    s.add_argument("--image", help="reference image (sets output size, enables PSNR)")
    s.add_argument("--height", type=int, default=256)
    s.add_argument("--width", type=int, default=256)
    s.add_argument("--loss-prob", type=float, default=0.0)
    s.add_argument("--packet-size", type=int, default=1024)
    s.add_argument("--truncate-after", type=int, default=0, help="send only the first N stages")
    s.add_argument("--reorder", action="store_true", help="shuffle packet arrival order")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default="runs/stream")
    s.set_defaults(func=cmd_stream)

    d = sub.add_parser("decode", help="render whatever a (possibly damaged) bitstream still holds")
    d.add_argument("bitstream")
    d.add_argument("--image", help="reference image to take the output size from")
    d.add_argument("--height", type=int, default=256)
    d.add_argument("--width", type=int, default=256)
    d.add_argument("--out-dir", default="runs/decode")
    d.set_defaults(func=cmd_decode)

    r = sub.add_parser("report", help="aggregate reports.jsonl files under a directory")
    r.add_argument("run_dir")
    r.set_defaults(func=cmd_report)

    rp = sub.add_parser("replay", help="re-run a command from its manifest")
    rp.add_argument("manifest")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args, argv)
    except (PPMError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except TrainingDiverged as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except StreamError as exc:
        print(f"decode failed: {exc}", file=sys.stderr)
        return EXIT_DECODE


if __name__ == "__main__":
    sys.exit(main())
