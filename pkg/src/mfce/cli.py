"""Command line: ``mfce gen|train|inspect|sweep --config run.json``.

Exit codes: 0 success, 1 runtime failure (divergence, I/O), 2 config error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

from . import convgeom, corpus, costmodel, model, trainer
from .convgeom import ModelSpec
from .errors import ConfigError, DivergenceError
from .trainer import TrainConfig

log = logging.getLogger("mfce")

SWEEP_COLUMNS = ("delta", "epoch", "heldout_nll", "heldout_fer", "wall_seconds",
                 "labels_processed")
DEFAULT_DELTAS = (0, 2, 4, 8, 16)

CORPUS_DEFAULTS = {
    "seed": 1, "num_states": 48, "mel_bins": 16, "num_utterances": 200,
    "min_frames": 150, "max_frames": 400, "p_loop": 0.7, "states_per_unit": 3,
    "noise": 1.0, "mean_scale": 1.0, "heldout_fraction": 0.1,
}


@dataclass
class RunConfig:
    corpus: dict
    spec: ModelSpec
    model_seed: int
    train: TrainConfig
    corpus_path: Optional[Path]
    out_dir: Optional[Path]
    raw: dict = field(default_factory=dict)

    def generate(self) -> corpus.Corpus:
        c = self.corpus
        return corpus.generate_corpus(
            c["seed"], c["num_states"], c["num_utterances"],
            (c["min_frames"], c["max_frames"]), c["mel_bins"],
            p_loop=c["p_loop"], states_per_unit=c["states_per_unit"],
            noise=c["noise"], mean_scale=c["mean_scale"],
            heldout_fraction=c["heldout_fraction"])


def _model_spec(section: dict, num_states: int, mel_bins: int) -> ModelSpec:
    preset = section.get("preset", "deep")
    if preset == "deep":
        return convgeom.deep_spec(
            num_targets=num_states, mel_bins=mel_bins,
            widths=section.get("widths", convgeom.DEEP_WIDTHS),
            bottleneck=section.get("bottleneck", 512),
            freq_pool_after=section.get("freq_pool_after", ()))
    if preset == "toy":
        return convgeom.toy_spec(num_targets=num_states, mel_bins=mel_bins,
                                 width=section.get("width", 4),
                                 hidden=section.get("bottleneck", 16))
    if preset == "custom":
        return ModelSpec.from_dict({"input_channels": section.get("input_channels", 3),
                                    "mel_bins": mel_bins, "num_targets": num_states,
                                    "layers": section.get("layers", [])})
    raise ConfigError(f"unknown model preset {preset!r}")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(raw) - {"corpus", "model", "train", "paths"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    base = path.parent

    csec = dict(CORPUS_DEFAULTS)
    extra = set(raw.get("corpus", {})) - set(CORPUS_DEFAULTS)
    if extra:
        raise ConfigError(f"unknown corpus settings: {sorted(extra)}")
    csec.update(raw.get("corpus", {}))
    if csec["num_states"] < 2 or csec["mel_bins"] < 1 or csec["num_utterances"] < 1:
        raise ConfigError("corpus needs num_states >= 2, mel_bins >= 1, num_utterances >= 1")
    if not 1 <= csec["min_frames"] <= csec["max_frames"]:
        raise ConfigError("corpus needs 1 <= min_frames <= max_frames")
    if not 0.0 <= csec["p_loop"] <= 1.0 or not 0.0 <= csec["heldout_fraction"] < 1.0:
        raise ConfigError("p_loop must lie in [0, 1] and heldout_fraction in [0, 1)")

    msec = dict(raw.get("model", {}))
    try:
        spec = _model_spec(msec, csec["num_states"], csec["mel_bins"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from exc
    tcfg = TrainConfig.from_dict(raw.get("train", {}))
    model_seed = int(msec.get("seed", tcfg.seed))

    paths = raw.get("paths", {})
    def resolve(key):
        v = paths.get(key)
        return None if v is None else (base / v if not Path(v).is_absolute() else Path(v))

    return RunConfig(csec, spec, model_seed, tcfg, resolve("corpus"), resolve("out"), raw)


# commands -------------------------------------------------------------------

def cmd_gen(cfg: RunConfig, out: Optional[Path] = None) -> int:
    target = out / "corpus.mfc" if out else cfg.corpus_path
    if target is None:
        raise ConfigError("paths.corpus is not set")
    if not target.parent.is_dir():
        raise ConfigError(f"output directory does not exist: {target.parent}")
    data = cfg.generate()
    corpus.save_corpus(data, target)
    l_m = convgeom.intrinsic_length(cfg.spec)
    print(f"utterances={len(data.train) + len(data.heldout)}, "
          f"frames={data.train_frames + data.heldout_frames}, "
          f"train_utterances={len(data.train)}, heldout_utterances={len(data.heldout)}")
    if data.train_frames >= l_m + cfg.train.delta:
        acc = corpus.epoch_accounting(data.train_frames, l_m, cfg.train.delta)
        print(f"l_m={l_m}, delta={acc.delta}, l_i={acc.l_i}, "
              f"samples_per_epoch={acc.samples_per_epoch}, labels_per_epoch={acc.labels_per_epoch}")
    print(f"wrote {target}")
    return 0


def _load_corpus(cfg: RunConfig) -> corpus.Corpus:
    if cfg.corpus_path is None:
        raise ConfigError("paths.corpus is not set")
    if not cfg.corpus_path.is_file():
        raise ConfigError(f"corpus file not found: {cfg.corpus_path} (run `mfce gen` first)")
    data = corpus.load_corpus(cfg.corpus_path)
    if data.num_states != cfg.spec.num_targets or data.mel_bins != cfg.spec.mel_bins:
        raise ConfigError(f"corpus (S={data.num_states}, D={data.mel_bins}) does not match "
                          f"the model section (S={cfg.spec.num_targets}, D={cfg.spec.mel_bins})")
    return data


def _out_dir(cfg: RunConfig, out: Optional[Path]) -> Path:
    target = out or cfg.out_dir
    if target is None:
        raise ConfigError("no output directory: set paths.out or pass --out")
    return Path(target)


def run_training(cfg: RunConfig, out_dir: Path, data: Optional[corpus.Corpus] = None):
    data = data if data is not None else _load_corpus(cfg)
    net = model.build(cfg.spec, cfg.model_seed)
    acc = corpus.epoch_accounting(data.train_frames, net.l_m, cfg.train.delta)
    log.info("l_m=%d delta=%d: %d samples, %d labels per epoch (upper bound)",
             net.l_m, cfg.train.delta, acc.samples_per_epoch, acc.labels_per_epoch)
    return trainer.train(net, data, cfg.train, out_dir)


def cmd_train(cfg: RunConfig, out: Optional[Path] = None) -> int:
    out_dir = _out_dir(cfg, out)
    data = _load_corpus(cfg)
    history = run_training(cfg, out_dir, data)
    for m in history:
        print(f"epoch={m.epoch} train_nll={m.train_nll:.4f} heldout_nll={m.heldout_nll:.4f} "
              f"heldout_fer={m.heldout_fer:.4f} labels={m.labels_processed} lr={m.lr:.6g}")
    print(f"wrote {out_dir / 'metrics.csv'}")
    return 0


def cmd_inspect(cfg: RunConfig, deltas=DEFAULT_DELTAS, out: Optional[Path] = None,
                measure: bool = False) -> int:
    spec = cfg.spec
    l_m = convgeom.intrinsic_length(spec)
    print(f"l_m={l_m}")
    red = convgeom.time_reductions(spec)
    dil = convgeom.cumulative_dilations(spec)
    chans = convgeom.channel_counts(spec)
    freqs = convgeom.frequency_extents(spec)
    print("layer  kind       k_t x k_f  dil  time_red  cum_dil  channels  freq")
    for i, layer in enumerate(spec.layers):
        k = f"{layer.kernel_t}x{layer.kernel_f}" if layer.kind != "relu" else "-"
        print(f"{i:5d}  {layer.kind:<9}  {k:>9}  {layer.dilation_t:3d}  {red[i]:8d}  "
              f"{dil[i]:7d}  {chans[i]:8d}  {freqs[i]:4d}")
    table = costmodel.cost_table(spec, deltas)
    print("\n" + "".join(f"{'delta=' + str(r['delta']):>14}" for r in table))
    print("".join(f"{r['l_i']:>14d}" for r in table) + "   l_i")
    print("".join(f"{r['labels']:>14d}" for r in table) + "   labels")
    print("".join(f"{r['ratio']:>14.4f}" for r in table) + "   flops / flops(l_m)")
    print("".join(f"{r['flops_per_label']:>14.4g}" for r in table) + "   flops per label")
    if out is not None or measure:
        net = model.build(spec, cfg.model_seed) if measure else None
        reports = [costmodel.cost_report(spec, d, net) for d in deltas]
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / "cost_report.json").write_text(json.dumps(reports, indent=2) + "\n")
            print(f"wrote {out / 'cost_report.json'}")
        else:
            print(json.dumps(reports, indent=2))
    return 0


def _sweep_one(args) -> tuple:
    cfg, delta, out_dir, data = args
    run_cfg = replace(cfg, train=replace(cfg.train, delta=delta))
    history = run_training(run_cfg, out_dir / f"delta_{delta}", data)
    return delta, history


def cmd_sweep(cfg: RunConfig, deltas: List[int], out: Optional[Path] = None) -> int:
    out_dir = _out_dir(cfg, out)
    if any(d < 0 for d in deltas):
        raise ConfigError("deltas must be >= 0")
    data = _load_corpus(cfg)
    workers = max(1, int(os.environ.get("MFCE_THREADS", "1")))
    jobs = [(cfg, d, out_dir, data) for d in deltas]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for delta, history in results:
            for m in history:
                w.writerow([delta, m.epoch, repr(m.heldout_nll), repr(m.heldout_fer),
                            f"{m.wall_seconds:.3f}", m.labels_processed])
    print(f"wrote {out_dir / 'sweep.csv'}")
    return 0


def _parse_deltas(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--deltas must be comma separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfce", description="Multi-frame CE training lab")
    p.add_argument("command", choices=("gen", "train", "inspect", "sweep"))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--deltas", default=None,
                   help="comma separated deltas (inspect, sweep); default 0,2,4,8,16")
    p.add_argument("--out", default=None, help="output directory (overrides paths.out)")
    p.add_argument("--measure", action="store_true", help="inspect: also time forward+backward")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        deltas = _parse_deltas(args.deltas) if args.deltas else list(DEFAULT_DELTAS)
        out = Path(args.out) if args.out else None
        if args.command == "gen":
            return cmd_gen(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "inspect":
            return cmd_inspect(cfg, deltas, out, args.measure)
        return cmd_sweep(cfg, deltas, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
