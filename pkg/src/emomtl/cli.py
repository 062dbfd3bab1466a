"""Command-line entry point: corpus generation, training, evaluation,
gradient checking.

Run configs are flat key=value INI files (see README for a full example).
Unknown keys are rejected and the fully resolved config is dumped next to
the run artifacts so every run is self-describing.

Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

from . import data as data_mod
from . import gradcheck, models
from .metrics import evaluate
from .models import VARIANTS
from .optim import LrSchedule
from .trainer import TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# CLI-facing variant names
VARIANT_NAMES = {
    "baseline-c": "baseline_c",
    "baseline-d": "baseline_d",
    "mtl": "multitask",
    "hier-dc": "hier_dc",
    "hier-cd": "hier_cd",
}

_SCHEMA = {
    "model": {"variant", "d_in", "d_enc", "d_att", "mlp", "n_enc_layers",
              "dropout", "leaky_slope", "hier_stop_gradient"},
    "loss": {"alpha", "beta"},
    "schedule": {"kind", "peak_lr", "warmup_steps", "decay_factor"},
    "train": {"batch_size", "max_epochs", "patience", "seed", "grad_clip",
              "output_dir"},
    "data": {"manifests", "train_split", "valid_split"},
}

_DEFAULTS = {
    "model": {"variant": "mtl", "d_in": "32", "d_enc": "64", "d_att": "64",
              "mlp": "64,32", "n_enc_layers": "1", "dropout": "0.2",
              "leaky_slope": "0.01", "hier_stop_gradient": "false"},
    "loss": {"alpha": "1.0", "beta": "1.0"},
    "schedule": {"kind": "warmup_peak", "peak_lr": "0.001",
                 "warmup_steps": "15000", "decay_factor": "0.85"},
    "train": {"batch_size": "32", "max_epochs": "50", "patience": "5",
              "seed": "0", "grad_clip": "0.0", "output_dir": ""},
    "data": {"manifests": "", "train_split": "train", "valid_split": "valid"},
}


class ConfigError(Exception):
    pass


def load_run_config(path):
    """Parse and validate a run config; returns (TrainConfig, data options,
    resolved configparser) or raises ConfigError listing every problem."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    problems = []
    for section in cp.sections():
        if section.startswith("mix."):
            unknown = set(cp[section]) - {"use_cont", "use_disc", "subsample_to"}
            if unknown:
                problems.append(f"[{section}] unknown keys: {sorted(unknown)}")
            continue
        if section not in _SCHEMA:
            problems.append(f"unknown section [{section}]")
            continue
        unknown = set(cp[section]) - _SCHEMA[section]
        if unknown:
            problems.append(f"[{section}] unknown keys: {sorted(unknown)}")
    if problems:
        raise ConfigError("; ".join(problems))

    resolved = configparser.ConfigParser()
    for section, defaults in _DEFAULTS.items():
        resolved[section] = dict(defaults)
        if cp.has_section(section):
            resolved[section].update(cp[section])
    for section in cp.sections():
        if section.startswith("mix."):
            resolved[section] = dict(cp[section])

    m, l, s, t, d = (resolved[k] for k in ("model", "loss", "schedule", "train", "data"))
    variant_cli = m["variant"]
    if variant_cli not in VARIANT_NAMES:
        raise ConfigError(
            f"invalid variant {variant_cli!r}; legal names: {sorted(VARIANT_NAMES)}"
        )
    try:
        mlp = tuple(int(x) for x in m["mlp"].split(","))
        cfg = TrainConfig(
            variant=VARIANT_NAMES[variant_cli],
            d_in=int(m["d_in"]), d_enc=int(m["d_enc"]), d_att=int(m["d_att"]),
            mlp=mlp, n_enc_layers=int(m["n_enc_layers"]),
            dropout=float(m["dropout"]), leaky_slope=float(m["leaky_slope"]),
            hier_stop_gradient=m.getboolean("hier_stop_gradient"),
            alpha=float(l["alpha"]), beta=float(l["beta"]),
            schedule=LrSchedule(
                kind=s["kind"], peak_lr=float(s["peak_lr"]),
                warmup_steps=int(s["warmup_steps"]),
                decay_factor=float(s["decay_factor"]),
                patience=int(t["patience"]),
            ),
            batch_size=int(t["batch_size"]), max_epochs=int(t["max_epochs"]),
            patience=int(t["patience"]), seed=int(t["seed"]),
            grad_clip=float(t["grad_clip"]),
            output_dir=t["output_dir"] or None,
        )
    except (ValueError, KeyError) as e:
        raise ConfigError(str(e)) from e
    manifests = [p.strip() for p in d["manifests"].split(",") if p.strip()]
    if not manifests:
        raise ConfigError("[data] manifests must list at least one manifest path")
    mix = {}
    for section in resolved.sections():
        if section.startswith("mix."):
            name = section[len("mix."):]
            sub = resolved[section].get("subsample_to", "").strip()
            mix[name] = data_mod.MixEntry(
                use_cont=resolved[section].getboolean("use_cont", True),
                use_disc=resolved[section].getboolean("use_disc", True),
                subsample_to=int(sub) if sub else None,
            )
    data_opts = {
        "manifests": manifests,
        "train_split": d["train_split"],
        "valid_split": d["valid_split"],
        "mix": mix,
    }
    return cfg, data_opts, resolved


def cmd_gen_synth(args) -> int:
    if args.n <= 0:
        print("error: --n must be positive", file=sys.stderr)
        return EXIT_CONFIG
    ratios = tuple(float(x) for x in args.split_ratios.split(","))
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        print("error: --split-ratios must be three values summing to 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        gains = tuple(float(x) for x in args.attr_gains.split(","))
        if len(gains) != 3:
            print("error: --attr-gains must be three values", file=sys.stderr)
            return EXIT_CONFIG
        manifest = data_mod.gen_synthetic(
            args.out, n=args.n, d_in=args.din, seed=args.seed,
            sigma_label=args.noise_label, sigma_frame=args.noise_frame,
            split_ratios=ratios, corpus=args.corpus, attr_gains=gains,
        )
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    counts = {}
    for r in manifest.records:
        counts[r.split] = counts.get(r.split, 0) + 1
    print(json.dumps({
        "out": str(args.out), "n": len(manifest), "d_in": args.din,
        "seed": args.seed, "splits": counts,
    }, sort_keys=True))
    return EXIT_OK


def _load_mixed(data_opts, seed, split):
    manifests = {}
    for path in data_opts["manifests"]:
        man = data_mod.Manifest.load(path)
        names = {r.corpus for r in man.records}
        for name in names:
            manifests[name] = data_mod.Manifest(
                [r for r in man.records if r.corpus == name]
            )
    return data_mod.mix_corpora(manifests, data_opts["mix"], seed=seed, split=split)


def cmd_train(args) -> int:
    try:
        cfg, data_opts, resolved = load_run_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.output_dir is None:
        print("config error: [train] output_dir is required for cmd_train",
              file=sys.stderr)
        return EXIT_CONFIG
    try:
        train_man = _load_mixed(data_opts, cfg.seed, data_opts["train_split"])
        valid_man = _load_mixed(data_opts, cfg.seed, data_opts["valid_split"])
    except (OSError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_config.ini", "w") as fh:
        resolved.write(fh)
    try:
        _, log = train(cfg, train_man, valid_man)
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(log.summary(), sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model = models.load_model(args.model)
        manifest = data_mod.Manifest.load(args.manifest).subset(args.split)
    except (OSError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    if len(manifest) == 0:
        print(f"data error: no records in split {args.split!r}", file=sys.stderr)
        return EXIT_DATA
    first = data_mod.read_features(manifest.records[0].path)
    if first.frames.shape[1] != model.dims.d_in:
        print(f"data error: feature dim {first.frames.shape[1]} does not match "
              f"model d_in {model.dims.d_in}", file=sys.stderr)
        return EXIT_DATA
    report = evaluate(model, data_mod.make_batches(manifest, args.batch_size))
    payload = report.to_json()
    print(payload)
    if args.json_out:
        with open(args.json_out, "w") as fh:
            fh.write(payload)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    variants = VARIANTS if args.variant is None else (VARIANT_NAMES[args.variant],)
    rows = gradcheck.run_all(seed=args.seed, variants=variants,
                             corrupt=args.inject_error)
    threshold = args.threshold
    failed = False
    print("component\ttensor\trel_err\tstatus")
    for row in rows:
        ok = row.rel_err < threshold
        failed |= not ok
        print(f"{row.component}\t{row.tensor}\t{row.rel_err:.3e}\t"
              f"{'ok' if ok else 'FAIL'}")
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emomtl",
                                description="Joint discrete/continuous emotion models")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="generate a synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--din", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--corpus", default="synth")
    g.add_argument("--noise-label", type=float, default=0.5)
    g.add_argument("--noise-frame", type=float, default=1.0)
    g.add_argument("--split-ratios", default="0.8,0.1,0.1")
    g.add_argument("--attr-gains", default="1,1,1",
                   help="per-attribute feature gain for V,A,D")
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved model on a manifest split")
    e.add_argument("--model", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--batch-size", type=int, default=32)
    e.add_argument("--json-out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--variant", choices=sorted(VARIANT_NAMES))
    c.add_argument("--threshold", type=float, default=1e-3)
    c.add_argument("--inject-error", action="store_true",
                   help=argparse.SUPPRESS)   # test hook: corrupt one gradient
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
