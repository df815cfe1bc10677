"""Command-line entry point.

Subcommands: gen-data, fit-stats, train, tokenize, detokenize, eval, sweep,
report. Every run resolves its configuration (file + --set overrides +
flags), echoes it into the output directory as config.json, and derives all
randomness from the seeds it records, so rerunning from an output directory
reproduces every numeric artifact bit for bit.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from . import baselines as B
from . import data as D
from . import evaluate as E
from . import model as M
from . import training as TR
from .checkpoint import CheckpointError


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "out_dir": "runs/default",
    "seed": 0,
    "data": {
        "families": ["sinusoid", "minjerk", "gripper"],
        "n_tasks": 41,
        "episodes_per_task": 6,
        "steps": 480,
        "dims": 7,
        "dt": 1.0 / 30.0,
        "noise_sigma": 0.01,
    },
    "chunking": {"horizon": 32, "stride": 16},
    "split": {"train": 40, "test": 1, "seed": 0},
    "tokenizer": M.TokenizerConfig().to_dict(),
    "train": TR.TrainConfig().to_dict(),
    "baselines": {
        "bins": 256,
        "quant_scales": [10.0, 32.0, 100.0, 316.0, 1000.0],
        "merge_budget": 512,
        "match_code_length": True,
        "match_tolerance": 0.1,
    },
    "sweep": {"code_lengths": [5, 10, 20, 40], "code_bits": [12], "seeds": [0]},
    "eval_seed": 0,
}


def default_config():
    return copy.deepcopy(DEFAULT_CONFIG)


def load_config(path=None, overrides=(), seed=None, out_dir=None):
    cfg = default_config()
    if path is not None:
        with open(path, encoding="utf-8") as f:
            _deep_update(cfg, json.load(f))
    for item in overrides:
        _apply_override(cfg, item)
    if seed is not None:
        cfg["seed"] = seed
    if out_dir is not None:
        cfg["out_dir"] = out_dir
    return cfg


def _deep_update(base, update):
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value


def _apply_override(cfg, item):
    if "=" not in item:
        raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(cfg, f, indent=1, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# shared pipeline pieces


def corpus_spec_from(cfg):
    d = cfg["data"]
    return D.CorpusSpec(
        families=tuple(d["families"]), n_tasks=d["n_tasks"],
        episodes_per_task=d["episodes_per_task"], steps=d["steps"], dims=d["dims"],
        dt=d["dt"], noise_sigma=d["noise_sigma"])


def tokenizer_config_from(cfg):
    return M.TokenizerConfig.from_dict(cfg["tokenizer"])


def train_config_from(cfg):
    return TR.TrainConfig.from_dict(cfg["train"])


def episodes_path(cfg):
    return os.path.join(cfg["out_dir"], "episodes.jsonl")


def stats_path(cfg):
    return os.path.join(cfg["out_dir"], "norm_stats.json")


def split_path(cfg):
    return os.path.join(cfg["out_dir"], "split.json")


def checkpoint_path(cfg):
    return os.path.join(cfg["out_dir"], "checkpoint.fact")


def load_split(cfg):
    with open(split_path(cfg)) as f:
        obj = json.load(f)
    return obj["train_tasks"], obj["test_tasks"]


def standardized_split_chunks(cfg):
    """Episodes -> chunks -> standardized train/test arrays per the split."""
    episodes = D.read_episodes(episodes_path(cfg))
    stats = D.NormStats.load(stats_path(cfg))
    train_tasks, test_tasks = load_split(cfg)
    chunk_cfg = cfg["chunking"]
    chunks, _ = D.chunk_episodes(episodes, chunk_cfg["horizon"], chunk_cfg["stride"])
    train = [D.standardize(c, stats) for c in chunks if c.task_id in set(train_tasks)]
    test = [D.standardize(c, stats) for c in chunks if c.task_id in set(test_tasks)]
    return train, test, stats


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(cfg):
    spec = corpus_spec_from(cfg)
    episodes = D.generate_synthetic_corpus(spec, cfg["seed"])
    os.makedirs(cfg["out_dir"], exist_ok=True)
    D.write_episodes(episodes_path(cfg), episodes)
    print(f"wrote {len(episodes)} episodes to {episodes_path(cfg)}")
    return 0


def cmd_fit_stats(cfg):
    episodes = D.read_episodes(episodes_path(cfg))
    task_ids = sorted({ep.task_id for ep in episodes})
    ratio = (cfg["split"]["train"], cfg["split"]["test"])
    train_tasks, test_tasks = D.split_task_ids(task_ids, ratio, cfg["split"]["seed"])
    stats = D.compute_norm_stats([ep for ep in episodes if ep.task_id in set(train_tasks)])
    stats.save(stats_path(cfg))
    with open(split_path(cfg), "w") as f:
        json.dump({"train_tasks": train_tasks, "test_tasks": test_tasks}, f, indent=1)
        f.write("\n")
    print(f"fit stats on {len(train_tasks)} train tasks; {len(test_tasks)} held out")
    return 0


def cmd_train(cfg):
    train_chunks, _, _ = standardized_split_chunks(cfg)
    if not train_chunks:
        raise ConfigError("no training chunks; run gen-data and fit-stats first")
    tok_cfg = tokenizer_config_from(cfg)
    train_cfg = train_config_from(cfg)
    arr = np.stack([c.values for c in train_chunks]).astype(np.float32)
    state = TR.TrainState(tok_cfg, train_cfg)
    metrics_path = os.path.join(cfg["out_dir"], "metrics.csv")
    last = {"step": -1}

    def progress(row):
        last.update(row)
        if row["step"] % 200 == 0:
            print(f"step {row['step']}: total {row['loss_total']:.4f} "
                  f"flow {row['loss_flow']:.4f}", flush=True)

    TR.train(state, arr, metrics_path=metrics_path, progress=progress)
    TR.save_state(state, checkpoint_path(cfg))
    print(f"trained {state.step} steps; checkpoint at {checkpoint_path(cfg)}")
    return 0


def _load_tokenizer(cfg):
    state = TR.load_state(checkpoint_path(cfg))
    stats = D.NormStats.load(stats_path(cfg))
    return M.FactTokenizer(state.cfg, state.params, stats)


def cmd_tokenize(cfg, input_path, output_path):
    tok = _load_tokenizer(cfg)
    episodes = D.read_episodes(input_path)
    chunk_cfg = cfg["chunking"]
    chunks, _ = D.chunk_episodes(episodes, chunk_cfg["horizon"], chunk_cfg["stride"])
    with open(output_path, "w", encoding="utf-8", newline="\n") as f:
        for chunk in chunks:
            ids = tok.tokenize(chunk)
            f.write(json.dumps({"task_id": chunk.task_id, "offset": chunk.source_offset,
                                "tokens": ids}, separators=(",", ":")))
            f.write("\n")
    print(f"tokenized {len(chunks)} chunks to {output_path}")
    return 0


def cmd_detokenize(cfg, input_path, output_path):
    tok = _load_tokenizer(cfg)
    count = 0
    with open(input_path, encoding="utf-8") as fin, \
            open(output_path, "w", encoding="utf-8", newline="\n") as fout:
        for line in fin:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            values = tok.detokenize(rec["tokens"], seed=cfg["eval_seed"])
            fout.write(json.dumps({"task_id": rec["task_id"], "offset": rec["offset"],
                                   "values": values.tolist()}, separators=(",", ":")))
            fout.write("\n")
            count += 1
    print(f"detokenized {count} chunks to {output_path}")
    return 0


def cmd_eval(cfg):
    train_chunks, test_chunks, stats = standardized_split_chunks(cfg)
    if not test_chunks:
        raise ConfigError("no test chunks; check the split")
    train_tasks, _ = load_split(cfg)
    seed = cfg["eval_seed"]
    records = []

    state = TR.load_state(checkpoint_path(cfg))
    fact = M.FactTokenizer(state.cfg, state.params, stats)
    fact_rec = E.eval_reconstruction(fact, test_chunks, seed=seed, train_task_ids=train_tasks)
    records.append(fact_rec)
    print(f"fact: mse {fact_rec.mse:.3e} at code length {fact_rec.code_length:.1f}")

    bl = cfg["baselines"]
    train_values = [c.values for c in train_chunks]
    horizon, dims = state.cfg.horizon, state.cfg.dims

    full_bin = E.BinningTokenizer.fit(train_values, horizon, dims, bins=bl["bins"])
    records.append(E.eval_reconstruction(full_bin, test_chunks, seed=seed,
                                         train_task_ids=train_tasks))
    budget_bin = E.BinningTokenizer.fit(train_values, horizon, dims, bins=bl["bins"],
                                        budget=int(round(fact_rec.code_length)))
    records.append(E.eval_reconstruction(budget_bin, test_chunks, seed=seed,
                                         train_task_ids=train_tasks))

    if bl.get("match_code_length", True):
        matching, evaluated = E.match_fast_code_length(
            train_values, test_chunks, target_len=fact_rec.code_length,
            tolerance=bl["match_tolerance"], scales=tuple(bl["quant_scales"]),
            merge_budget=bl["merge_budget"], seed=seed)
        records.extend(rec for _, rec in evaluated)
    else:
        for scale in bl["quant_scales"]:
            tok = E.FastBaselineTokenizer.fit(train_values, scale,
                                              merge_budget=bl["merge_budget"], seed=seed)
            records.extend([E.eval_reconstruction(tok, test_chunks, seed=seed,
                                                  train_task_ids=train_tasks)])

    for rec in records:
        E.append_record(rec, os.path.join(cfg["out_dir"], "records.csv"))
    E.emit_report(records, cfg["out_dir"])
    print(f"wrote {len(records)} records to {cfg['out_dir']}")
    return 0


def cmd_sweep(cfg, jobs=1):
    train_chunks, test_chunks, _ = standardized_split_chunks(cfg)
    arr = np.stack([c.values for c in train_chunks]).astype(np.float32)
    records_path = os.path.join(cfg["out_dir"], "records.csv")
    sw = cfg["sweep"]
    records = E.sweep(tokenizer_config_from(cfg), train_config_from(cfg), arr, test_chunks,
                      sw["code_lengths"], sw["code_bits"], sw["seeds"], records_path,
                      jobs=jobs)
    print(f"sweep complete: {len(records)} new records in {records_path}")
    return 0


def cmd_report(cfg):
    records_path = os.path.join(cfg["out_dir"], "records.csv")
    records = E.read_records(records_path)
    paths = E.emit_report(records, cfg["out_dir"])
    print(f"report written: {paths['csv']}, {paths['summary']}, {paths['svg']}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="facttok",
        description="Train and evaluate trajectory tokenizers on synthetic corpora.")
    parser.add_argument("--config", metavar="PATH", help="JSON run configuration")
    parser.add_argument("--set", metavar="K=V", action="append", default=[],
                        dest="overrides", help="override a config key (dotted path)")
    parser.add_argument("--seed", type=int, help="override the top-level seed")
    parser.add_argument("--out", metavar="DIR", help="override the output directory")
    parser.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    sub = parser.add_subparsers(dest="command")
    for name in ("gen-data", "fit-stats", "train", "eval", "sweep", "report"):
        sub.add_parser(name)
    tok = sub.add_parser("tokenize")
    tok.add_argument("--input", required=True, help="episode JSONL to tokenize")
    tok.add_argument("--output", required=True, help="token JSONL destination")
    detok = sub.add_parser("detokenize")
    detok.add_argument("--input", required=True, help="token JSONL to decode")
    detok.add_argument("--output", required=True, help="chunk JSONL destination")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        cfg = load_config(args.config, args.overrides, seed=args.seed, out_dir=args.out)
        echo_config(cfg, cfg["out_dir"])
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "fit-stats":
            return cmd_fit_stats(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "tokenize":
            return cmd_tokenize(cfg, args.input, args.output)
        if args.command == "detokenize":
            return cmd_detokenize(cfg, args.input, args.output)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, jobs=args.jobs)
        if args.command == "report":
            return cmd_report(cfg)
        parser.print_usage(sys.stderr)
        return 1
    except (ConfigError, D.DataError, M.ModelError, B.BaselineError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TR.TrainingDiverged, CheckpointError, E.EvalError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
