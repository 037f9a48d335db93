"""``amqc`` command line: gen-data, train, eval, quantize, bench, broker, run-loop, report.

Exit status: 0 success, 2 configuration error, 3 missing upstream artifact,
4 runtime or numeric failure. Failures print one line to stderr:
``amqc: error code=<n> kind=<kind>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from amqc import __version__
from amqc.cli.artifacts import (
    SPLIT_RATIO,
    Layout,
    dump_json,
    read_dataset,
    read_jsonl,
    require,
    write_dataset,
    write_jsonl,
    write_text,
)
from amqc.cli.config import load_config
from amqc.errors import AmqcError, ConfigError, DependencyError

log = logging.getLogger("amqc.cli")

COMMANDS = ("gen-data", "train", "eval", "quantize", "bench", "broker", "run-loop", "report")
SEED_KEY = {"gen-data": "data.seed", "train": "train.seed", "run-loop": "loop.seed",
            "bench": "train.seed"}

# flag -> config key, per command
FLAGS = {
    "gen-data": {"n_samples": "data.n_samples"},
    "train": {"preset": "train.preset", "epochs": "train.epochs", "lr": "train.lr",
              "lr_decay": "train.lr_decay", "decay_every": "train.decay_every",
              "batch_size": "train.batch_size"},
    "eval": {},
    "quantize": {"calibration_n": "quant.calibration_n"},
    "bench": {"batch_size": "bench.batch_size", "frames": "bench.frames",
              "warmup": "bench.warmup"},
    "broker": {"host": "broker.host", "port": "broker.port",
               "retransmit_ms": "broker.retransmit_ms"},
    "run-loop": {"layers": "loop.layers", "sites": "loop.sites", "mode": "loop.mode",
                 "controller": "loop.controller", "power": "loop.power", "speed": "loop.speed",
                 "feed": "loop.feed", "thresholds": "loop.thresholds",
                 "retransmit_ms": "broker.retransmit_ms"},
    "report": {},
}


def provenance(command, cfg):
    config = cfg.as_dict()
    del config["data"]["out_dir"]  # where artifacts live does not change their content
    return {"command": command, "version": __version__, "config": config}


# -- commands -----------------------------------------------------------------

def cmd_gen_data(cfg, out):
    from amqc.datagen import make_sample_set

    d = cfg.data
    samples = make_sample_set(d["n_samples"], d["seed"])
    manifest = write_dataset(out, samples, provenance("gen-data", cfg))
    print(f"wrote {manifest['n_samples']} image/annotation pairs to {out.data}")


def _splits(out):
    from amqc.datagen import split_dataset

    samples, manifest = read_dataset(out)
    return split_dataset(samples, SPLIT_RATIO, manifest["seed"])


def cmd_train(cfg, out):
    from amqc.cnn import TrainConfig, build_network, evaluate, fit, sample_arrays, save_weights
    from amqc.metrics import accuracy

    t = cfg.train
    train, test = _splits(out)
    Xtr, ytr = sample_arrays(train)
    Xte, yte = sample_arrays(test)
    tc = TrainConfig(t["lr"], t["batch_size"], t["epochs"], t["seed"], t["lr_decay"],
                     t["decay_every"])
    rows = [{"kind": "provenance", **provenance("train", cfg),
             "train_samples": len(train), "test_samples": len(test)}]

    def on_epoch(epoch, net, loss):
        acc = accuracy(evaluate(net, Xte, yte))
        rows.append({"kind": "epoch", "epoch": epoch, "loss": loss, "test_accuracy": acc})
        log.info("epoch %d  loss %.4f  test accuracy %.4f", epoch, loss, acc)

    net, _ = fit(build_network(t["preset"], t["seed"]), Xtr, ytr, tc, on_epoch)
    out.model.mkdir(parents=True, exist_ok=True)
    save_weights(net, out.weights)
    write_jsonl(out.train_log, rows)
    final = rows[-1].get("test_accuracy") if len(rows) > 1 else None
    print(f"wrote {out.weights} ({t['preset']}, {t['epochs']} epochs"
          + (f", test accuracy {final:.4f})" if final is not None else ")"))


def _load_float(out):
    from amqc.cnn import load_weights

    return load_weights(require(out.weights, "train"))


def cmd_eval(cfg, out):
    from amqc.cnn import evaluate, sample_arrays
    from amqc.metrics import build_report, render_report

    net = _load_float(out)
    _, test = _splits(out)
    X, y = sample_arrays(test, net.input_shape)
    report = build_report(evaluate(net, X, y), provenance=provenance("eval", cfg))
    text, jsonl = render_report(report)
    write_text(out.eval_txt, text)
    write_text(out.eval_jsonl, jsonl)
    print(text, end="")


def cmd_quantize(cfg, out):
    from amqc.cnn import sample_arrays
    from amqc.quant import calibrate, qforward, quantize_network, save_qnet

    net = _load_float(out)
    train, test = _splits(out)
    n = min(cfg.quant["calibration_n"], len(train))
    Xcal, _ = sample_arrays(type(train)(train.samples[:n], train.seed), net.input_shape)
    qnet = quantize_network(net, calibrate(net, Xcal))
    save_qnet(qnet, out.qweights)
    X, y = sample_arrays(test, net.input_shape)
    pf, pq = net.forward(X).argmax(1), qforward(qnet, X).argmax(1)
    summary = {**provenance("quantize", cfg), "calibration_samples": n,
               "test_samples": len(y), "top1_agreement": float(np.mean(pf == pq)),
               "float_accuracy": float(np.mean(pf == y)),
               "quantized_accuracy": float(np.mean(pq == y))}
    write_text(out.quant_log, json.dumps(summary, sort_keys=True, indent=1) + "\n")
    print(f"wrote {out.qweights}; top-1 agreement {summary['top1_agreement']:.4f} "
          f"on {len(y)} test images")


def cmd_bench(cfg, out):
    from amqc.quant import bench_latency, load_qnet, reduction_pct

    b = cfg.bench
    net = _load_float(out)
    qnet = load_qnet(require(out.qweights, "quantize"))
    rng = np.random.default_rng(cfg.train["seed"])
    batch = rng.random((b["batch_size"],) + net.input_shape).astype(np.float32)
    kw = dict(batch_size=b["batch_size"], frames=b["frames"], warmup=b["warmup"], batch=batch)
    reports = [bench_latency(net, **kw), bench_latency(qnet, **kw)]
    base, quant = reports
    summary = {"kind": "summary", "reduction_pct": reduction_pct(base.mean_ms, quant.mean_ms),
               "quantized_fps": quant.fps, "advisory_fps": 6.4, "reference_reduction_pct": 47.0,
               "nondeterministic": ["mean_ms", "p50_ms", "p95_ms", "fps", "reduction_pct",
                                    "quantized_fps"],
               "provenance": provenance("bench", cfg)}
    rows = [{"kind": "latency", **json.loads(r.to_json())} for r in reports] + [summary]
    write_jsonl(out.bench, rows)
    for r in reports:
        print(f"{r.variant:9s} batch {r.batch_size}: {r.mean_ms:.2f} ms/frame, {r.fps:.2f} FPS")
    print(f"latency reduction {summary['reduction_pct']:.1f}%")


def cmd_broker(cfg, out):
    from amqc.telemetry import Broker

    br = cfg.broker
    broker = Broker(br["host"], br["port"], retransmit_ms=br["retransmit_ms"]).start()
    host, port = broker.address
    print(f"broker listening on {host}:{port} (Ctrl-C to stop)", flush=True)
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        broker.stop()


def _loop_network(out):
    from amqc.quant import load_qnet

    if out.qweights.exists():
        return load_qnet(out.qweights)
    return _load_float(out)


def cmd_run_loop(cfg, out):
    from amqc.telemetry import Broker
    from amqc.twin import LoopConfig, ProcessState, run_closed_loop

    lp = cfg.loop
    lc = LoopConfig(layers=lp["layers"], sites=lp["sites"], seed=lp["seed"],
                    controller=lp["controller"], mode=lp["mode"],
                    thresholds=tuple(lp["thresholds"]), node_id=lp["node_id"],
                    start=ProcessState(lp["power"], lp["speed"], lp["feed"]))
    if lc.mode == "model_only":
        report = run_closed_loop(lc)
    else:
        net = _loop_network(out)
        with Broker(retransmit_ms=cfg.broker["retransmit_ms"]).start(listen=False) as broker:
            report = run_closed_loop(lc, net, broker)
    lines = report.to_jsonl().splitlines(keepends=True)
    summary = json.loads(lines[-1])
    summary["provenance"] = provenance("run-loop", cfg)
    write_text(out.loop, "".join(lines[:-1]) + dump_json(summary) + "\n")
    print(f"{lc.layers} layers ({lc.mode}, controller {'on' if lc.controller else 'off'}): "
          f"defects/layer {report.baseline_defect_rate:.1f} -> {report.final_defect_rate:.1f}, "
          f"reduction {report.defect_reduction_pct:.1f}%, "
          f"correction rate {report.correction_rate_pct:.1f}%")


def cmd_report(cfg, out):
    parts = []
    if out.eval_txt.exists():
        parts.append("== classification (test split) ==\n" + out.eval_txt.read_text("utf-8"))
    if out.quant_log.exists():
        q = json.loads(out.quant_log.read_text("utf-8"))
        parts.append("== int8 quantization ==\n"
                     f"top-1 agreement {q['top1_agreement']:.4f}, float accuracy "
                     f"{q['float_accuracy']:.4f}, int8 accuracy {q['quantized_accuracy']:.4f}\n")
    if out.bench.exists():
        rows = read_jsonl(out.bench)
        lines = [f"{r['variant']:9s} {r['mean_ms']:.2f} ms/frame  {r['fps']:.2f} FPS"
                 for r in rows if r["kind"] == "latency"]
        s = rows[-1]
        lines.append(f"reduction {s['reduction_pct']:.1f}% (reference {s['reference_reduction_pct']:g}%)")
        parts.append("== latency ==\n" + "\n".join(lines) + "\n")
    if out.loop.exists():
        s = read_jsonl(out.loop)[-1]
        parts.append("== closed loop ==\n"
                     f"defects/layer first window {s['baseline_defect_rate']:.2f}, "
                     f"last window {s['final_defect_rate']:.2f}\n"
                     f"defect reduction {s['defect_reduction_pct']:.2f}%, correction rate "
                     f"{s['correction_rate_pct']:.2f}% ({s['successful_actions']}/"
                     f"{s['actions_taken']} actions)\n")
    if not parts:
        raise DependencyError(f"no artifacts under {out.root}; run eval, bench or run-loop first")
    text = "\n".join(parts)
    write_text(out.report, text)
    print(text, end="")


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "quantize": cmd_quantize, "bench": cmd_bench, "broker": cmd_broker,
            "run-loop": cmd_run_loop, "report": cmd_report}


# -- argument parsing ---------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file; flags override it")
    common.add_argument("--seed", type=int, help="seed for this command's stage")
    common.add_argument("--out", help="artifact root (data.out_dir)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="amqc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"amqc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {"gen-data": "write synthetic PGM + VOC XML pairs",
             "train": "train the CNN on the generated data",
             "eval": "classification report on the test split",
             "quantize": "int8 post-training quantization",
             "bench": "float vs int8 latency",
             "broker": "serve the MQTT-subset broker over TCP",
             "run-loop": "closed-loop process control run",
             "report": "summarize existing artifacts"}
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        for flag in FLAGS[name]:
            p.add_argument("--" + flag.replace("_", "-"), dest=flag, metavar="VALUE")
    return parser


def _config_from_args(args):
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    for flag, key in FLAGS[args.command].items():
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if args.seed is not None and args.command in SEED_KEY:
        overrides[SEED_KEY[args.command]] = args.seed
    if args.out is not None:
        overrides["data.out_dir"] = args.out
    return load_config(args.config, overrides)


EXIT = {ConfigError: (2, "config"), DependencyError: (3, "dependency")}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train"
                        else logging.WARNING, format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _config_from_args(args)
        HANDLERS[args.command](cfg, Layout(cfg.data["out_dir"]))
    except Exception as exc:  # noqa: BLE001 - mapped to an exit status
        code, kind = next(((c, k) for t, (c, k) in EXIT.items() if isinstance(exc, t)),
                          (4, "runtime" if isinstance(exc, AmqcError) else type(exc).__name__))
        message = " ".join(str(exc).split()) or type(exc).__name__
        print(f"amqc: error code={code} kind={kind}: {message}", file=sys.stderr)
        if args.verbose:
            logging.getLogger("amqc").exception("traceback")
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
