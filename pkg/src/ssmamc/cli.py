"""Command-line entry point: gen / train / eval / ablate / bench.

Option precedence is flag > config file > preset > built-in default. Config
files are flat ``key=value`` text with ``#`` comments; unknown keys are
rejected. Every run that produces outputs also writes its fully-resolved
configuration next to them, so a run can be reproduced from that file
alone. Exit codes: 0 success, 1 usage error, 2 data/format error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .dataio import FormatError, read, split, write
from .model import ModelConfig, ModulationClassifier
from .siggen import DatasetSpec, generate
from .tensor import NumericalError
from .train import TrainConfig, ablate, evaluate, summarize_ablation, train


class UsageError(Exception):
    """Bad invocation: unknown flag/key, malformed value, missing argument."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures into exit code 1
        raise UsageError(message)


PRESETS = {
    # six-scheme QAM family over the standard grid; per_cell is chosen so
    # each modulation totals 3072 samples across the 8 SNR bins
    "torchsig-qam": {
        "schemes": "qam64,qam256,qam1024,qam32x,qam128x,qam512x",
        "snrs": "-15:5:20",
        "lengths": "128,256,512,1024,2048,4096",
        "per_cell": "384",
    },
}

_NEG_VALUE_FLAGS = {"--snrs"}


def _merge_negative_values(argv: list[str]) -> list[str]:
    """Join flags with leading-minus values ('--snrs -15:5:20') into one token."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        nxt = argv[i + 1] if i + 1 < len(argv) else None
        if (tok in _NEG_VALUE_FLAGS and nxt and len(nxt) > 1
                and nxt[0] == "-" and (nxt[1].isdigit() or nxt[1] == ".")):
            out.append(f"{tok}={nxt}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


# -- value parsers (shared by flags and config files) -------------------------


def parse_snrs(text: str) -> tuple[float, ...]:
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"bad SNR range {text!r}; expected start:step:stop")
        start, step, stop = (float(p) for p in parts)
        if step <= 0:
            raise UsageError("SNR range step must be positive")
        vals, k = [], 0
        while start + k * step <= stop + 1e-9:
            vals.append(round(start + k * step, 9))
            k += 1
        if not vals:
            raise UsageError(f"empty SNR range {text!r}")
        return tuple(vals)
    return tuple(float(p) for p in text.split(",") if p.strip())


def parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in str(text).split(",") if p.strip())


def parse_schemes(text: str) -> tuple[str, ...]:
    return tuple(p.strip().lower() for p in text.split(",") if p.strip())


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def read_config_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _resolve(args, spec: dict, preset: dict | None = None) -> dict:
    """Merge flag/file/preset/default layers and parse values uniformly."""
    file_cfg = {}
    if getattr(args, "config", None):
        file_cfg = read_config_file(args.config)
    unknown = set(file_cfg) - set(spec)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for key, (parse, default) in spec.items():
        raw = getattr(args, key, None)
        if raw is None and key in file_cfg:
            raw = file_cfg[key]
        if raw is None and preset is not None and key in preset:
            raw = preset[key]
        if raw is None:
            out[key] = default
            continue
        try:
            out[key] = parse(raw)
        except UsageError:
            raise
        except (TypeError, ValueError) as e:
            raise UsageError(f"bad value for {key}: {raw!r} ({e})") from None
    if out.get("workers", 1) < 1:
        raise UsageError("workers must be >= 1")
    return out


def _final_seed(value) -> int:
    """Flag/file seed, else the SSMAMC_SEED environment variable, else 0."""
    if value is not None:
        return value
    env = os.environ.get("SSMAMC_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"SSMAMC_SEED must be an integer, got {env!r}") from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return "" if v is None else str(v)


def _write_resolved(out_dir, command: str, resolved: dict) -> None:
    # unset optionals are omitted so the file can be fed back via --config
    path = Path(out_dir) / f"resolved_{command}.cfg"
    lines = [f"# resolved configuration for '{command}'"]
    lines += [f"{k}={_fmt(resolved[k])}" for k in sorted(resolved)
              if resolved[k] is not None]
    path.write_text("\n".join(lines) + "\n")


def _require(resolved: dict, key: str, flag: str):
    if resolved[key] is None:
        raise UsageError(f"{flag} is required")
    return resolved[key]


# -- option tables -------------------------------------------------------------

_MODEL_SPEC = {
    "d_model": (int, 64),
    "n_state": (int, 16),
    "blocks": (int, 2),
    "conv_kernel": (int, 5),
    "expand": (int, 2),
    "use_denoise": (parse_bool, True),
    "use_ssm": (parse_bool, True),
    "use_gate": (parse_bool, True),
    "use_norm": (parse_bool, True),
}


def _build_model_config(res: dict, num_classes: int, seed: int) -> ModelConfig:
    return ModelConfig(
        num_classes=num_classes, num_blocks=res["blocks"],
        d_model=res["d_model"], n_state=res["n_state"],
        conv_kernel=res["conv_kernel"], expand=res["expand"],
        use_denoise=res["use_denoise"], use_ssm=res["use_ssm"],
        use_gate=res["use_gate"], use_norm=res["use_norm"], seed=seed)


def _add_model_flags(sp) -> None:
    sp.add_argument("--d-model", dest="d_model")
    sp.add_argument("--n-state", dest="n_state")
    sp.add_argument("--blocks", dest="blocks")
    sp.add_argument("--conv-kernel", dest="conv_kernel")
    sp.add_argument("--expand", dest="expand")
    for name, dest in (("--no-denoise", "use_denoise"), ("--no-ssm", "use_ssm"),
                       ("--no-gate", "use_gate"), ("--no-norm", "use_norm")):
        sp.add_argument(name, dest=dest, action="store_const", const="false",
                        default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="ssmamc",
                     description="Modulation classification pipeline")
    sub = parser.add_subparsers(dest="command")

    g = sub.add_parser("gen", help="synthesize AMCD dataset files")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--schemes")
    g.add_argument("--lengths")
    g.add_argument("--length", help="single length (overrides --lengths)")
    g.add_argument("--snrs")
    g.add_argument("--per-cell", dest="per_cell")
    g.add_argument("--seed")
    g.add_argument("--out")
    g.add_argument("--pulse", choices=["rrc", "ideal"])
    g.add_argument("--rolloff")
    g.add_argument("--span")
    g.add_argument("--sps")
    g.add_argument("--no-phase-offset", dest="phase_offset",
                   action="store_const", const="false", default=None)
    g.add_argument("--workers")
    g.add_argument("--config")

    t = sub.add_parser("train", help="train a classifier on an AMCD file")
    t.add_argument("--data")
    t.add_argument("--epochs")
    t.add_argument("--batch")
    t.add_argument("--lr")
    t.add_argument("--seed")
    t.add_argument("--precision", choices=["float32", "float64"])
    t.add_argument("--scan", choices=["parallel", "sequential"])
    t.add_argument("--holdout")
    t.add_argument("--split-seed", dest="split_seed")
    t.add_argument("--out")
    t.add_argument("--workers")
    t.add_argument("--config")
    _add_model_flags(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint on an AMCD file")
    e.add_argument("--data")
    e.add_argument("--ckpt")
    e.add_argument("--batch")
    e.add_argument("--scan", choices=["parallel", "sequential"])
    e.add_argument("--split", choices=["all", "train", "test"])
    e.add_argument("--split-seed", dest="split_seed")
    e.add_argument("--holdout")
    e.add_argument("--out")
    e.add_argument("--workers")
    e.add_argument("--config")

    a = sub.add_parser("ablate", help="train full/no-denoise/no-ssm variants")
    a.add_argument("--data")
    a.add_argument("--epochs")
    a.add_argument("--batch")
    a.add_argument("--lr")
    a.add_argument("--seeds")
    a.add_argument("--holdout")
    a.add_argument("--split-seed", dest="split_seed")
    a.add_argument("--scan", choices=["parallel", "sequential"])
    a.add_argument("--out")
    a.add_argument("--workers")
    a.add_argument("--config")
    _add_model_flags(a)

    b = sub.add_parser("bench", help="runtime sweeps vs length or batch size")
    b.add_argument("--mode", choices=["length", "batch"])
    b.add_argument("--lengths")
    b.add_argument("--length", help="sequence length for batch mode")
    b.add_argument("--batch")
    b.add_argument("--batches")
    b.add_argument("--classes")
    b.add_argument("--seed")
    b.add_argument("--out")
    b.add_argument("--workers")
    b.add_argument("--config")
    _add_model_flags(b)

    return parser


# -- handlers -------------------------------------------------------------------


def cmd_gen(args) -> int:
    spec_table = {
        "schemes": (parse_schemes, None),
        "lengths": (parse_ints, None),
        "length": (int, None),
        "snrs": (parse_snrs, None),
        "per_cell": (int, 384),
        "seed": (int, None),
        "out": (str, None),
        "pulse": (str, "rrc"),
        "rolloff": (float, 0.35),
        "span": (int, 8),
        "sps": (int, 8),
        "phase_offset": (parse_bool, True),
        "workers": (int, 1),
    }
    preset = PRESETS.get(args.preset) if args.preset else None
    res = _resolve(args, spec_table, preset)
    res["seed"] = _final_seed(res["seed"])
    out_dir = Path(_require(res, "out", "--out"))
    if res["schemes"] is None:
        raise UsageError("--schemes (or --preset) is required")
    if res["length"] is not None:
        res["lengths"] = (res["length"],)
    if res["lengths"] is None:
        raise UsageError("--lengths or --length (or --preset) is required")
    if res["snrs"] is None:
        raise UsageError("--snrs (or --preset) is required")
    try:
        spec = DatasetSpec(
            schemes=res["schemes"], lengths=res["lengths"], snrs=res["snrs"],
            per_cell=res["per_cell"], seed=res["seed"], pulse=res["pulse"],
            rolloff=res["rolloff"], span=res["span"], sps=res["sps"],
            phase_offset=res["phase_offset"])
    except ValueError as e:
        raise UsageError(str(e)) from None
    out_dir.mkdir(parents=True, exist_ok=True)
    for length in spec.lengths:
        ds = generate(spec, length)
        path = out_dir / f"dataset_L{length}.amcd"
        write(ds, path)
        print(f"wrote {path} ({len(ds)} samples, {ds.num_classes} classes)")
    _write_resolved(out_dir, "gen", res)
    return 0


def _load_split(res: dict):
    ds = read(res["data"])
    holdout = res["holdout"]
    if holdout <= 0:
        return ds, ds, ds
    train_part, test_part = split(ds, ratio=1.0 - holdout, seed=res["split_seed"])
    return ds, train_part, test_part


def cmd_train(args) -> int:
    spec_table = {
        "data": (str, None),
        "epochs": (int, 20),
        "batch": (int, 32),
        "lr": (float, 3e-3),
        "seed": (int, None),
        "precision": (str, "float32"),
        "scan": (str, "parallel"),
        "holdout": (float, 0.2),
        "split_seed": (int, 0),
        "out": (str, None),
        "workers": (int, 1),
        **_MODEL_SPEC,
    }
    res = _resolve(args, spec_table)
    res["seed"] = _final_seed(res["seed"])
    _require(res, "data", "--data")
    out_dir = Path(_require(res, "out", "--out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    ds, train_part, _ = _load_split(res)
    mconf = _build_model_config(res, ds.num_classes, res["seed"])
    model = ModulationClassifier(mconf)
    tconf = TrainConfig(epochs=res["epochs"], batch_size=res["batch"],
                        lr=res["lr"], seed=res["seed"],
                        precision=res["precision"], mode=res["scan"],
                        ckpt_path=str(out_dir / "model.mmck"))
    history = train(model, train_part, tconf)
    with open(out_dir / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss", "wall_s"])
        for h in history:
            w.writerow([h.epoch, f"{h.mean_loss:.6f}", f"{h.wall_time_s:.3f}"])
    _write_resolved(out_dir, "train", res)
    print(f"trained {tconf.epochs} epochs on {len(train_part)} samples; "
          f"final loss {history[-1].mean_loss:.4f}; "
          f"checkpoint {tconf.ckpt_path}")
    return 0


def cmd_eval(args) -> int:
    spec_table = {
        "data": (str, None),
        "ckpt": (str, None),
        "batch": (int, 64),
        "scan": (str, "parallel"),
        "split": (str, "all"),
        "split_seed": (int, 0),
        "holdout": (float, 0.2),
        "out": (str, None),
        "workers": (int, 1),
    }
    res = _resolve(args, spec_table)
    _require(res, "data", "--data")
    _require(res, "ckpt", "--ckpt")
    model = ModulationClassifier.load(res["ckpt"])
    ds = read(res["data"])
    if res["split"] != "all":
        train_part, test_part = split(ds, ratio=1.0 - res["holdout"],
                                      seed=res["split_seed"])
        ds = train_part if res["split"] == "train" else test_part
    report = evaluate(model, ds, batch_size=res["batch"], mode=res["scan"])
    if res["out"]:
        out_dir = Path(res["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "eval_snr.csv").write_text(report.to_csv())
        (out_dir / "report.txt").write_text(report.to_text() + "\n")
        _write_resolved(out_dir, "eval", res)
        print(f"overall accuracy {report.overall_accuracy:.4f}; "
              f"report under {out_dir}")
    else:
        print(report.to_text())
    return 0


def cmd_ablate(args) -> int:
    spec_table = {
        "data": (str, None),
        "epochs": (int, 10),
        "batch": (int, 32),
        "lr": (float, 3e-3),
        "seeds": (parse_ints, (0, 1, 2)),
        "holdout": (float, 0.2),
        "split_seed": (int, 0),
        "scan": (str, "parallel"),
        "out": (str, None),
        "workers": (int, 1),
        **_MODEL_SPEC,
    }
    res = _resolve(args, spec_table)
    _require(res, "data", "--data")
    out_dir = Path(_require(res, "out", "--out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    res["holdout"] = max(res["holdout"], 1e-9)  # ablation always needs a test part
    ds, train_part, test_part = _load_split(res)
    base = _build_model_config(res, ds.num_classes, seed=0)
    tconf = TrainConfig(epochs=res["epochs"], batch_size=res["batch"],
                        lr=res["lr"], mode=res["scan"])
    rows = ablate(base, train_part, test_part, tconf, seeds=res["seeds"])
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "seed", "accuracy", "param_count"])
        for r in rows:
            w.writerow([r.variant, r.seed, f"{r.accuracy:.6f}", r.param_count])
    summary = summarize_ablation(rows)
    (out_dir / "ablation_summary.txt").write_text(json.dumps(summary, indent=2) + "\n")
    _write_resolved(out_dir, "ablate", res)
    for variant, stats in summary.items():
        print(f"{variant}: mean accuracy {stats['mean_accuracy']:.4f} "
              f"(delta vs full {stats['delta_vs_full']:+.4f})")
    return 0


def cmd_bench(args) -> int:
    spec_table = {
        "mode": (str, None),
        "lengths": (parse_ints, bench_mod.DEFAULT_LENGTHS),
        "length": (int, 4096),
        "batch": (int, 4),
        "batches": (parse_ints, (1, 2, 4, 8, 16, 32)),
        "classes": (int, 6),
        "seed": (int, None),
        "out": (str, None),
        "workers": (int, 1),
        **_MODEL_SPEC,
    }
    res = _resolve(args, spec_table)
    res["seed"] = _final_seed(res["seed"])
    mode = _require(res, "mode", "--mode")
    if mode not in ("length", "batch"):
        raise UsageError(f"--mode must be length or batch, got {mode!r}")
    out_dir = Path(_require(res, "out", "--out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    mconf = _build_model_config(res, res["classes"], res["seed"])
    if mode == "length":
        results = bench_mod.sweep_length(lambda: ModulationClassifier(mconf),
                                         lengths=res["lengths"],
                                         batch=res["batch"], seed=res["seed"])
        bench_mod.write_length_csv(results, out_dir / "bench_length.csv")
    else:
        model = ModulationClassifier(mconf)
        results = bench_mod.sweep_batch(model, length=res["length"],
                                        batches=res["batches"], seed=res["seed"])
        bench_mod.write_batch_csv(results, out_dir / "bench_batch.csv")
    _write_resolved(out_dir, "bench", res)
    for r in results:
        print(f"L={r.length} B={r.batch} {r.phase}: {r.status} "
              f"median {r.median_s:.4g}s throughput {r.throughput:.4g}/s")
    return 0


HANDLERS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "bench": cmd_bench}


def _run(argv) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(_merge_negative_values(argv))
    if args.command is None:
        raise UsageError("a subcommand is required (gen/train/eval/ablate/bench)")
    return HANDLERS[args.command](args)


def main(argv=None) -> int:
    try:
        return _run(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # argparse --help
        return e.code if isinstance(e.code, int) else 0
    except (FormatError, OSError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError, MemoryError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
