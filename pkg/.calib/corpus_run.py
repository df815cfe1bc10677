import numpy as np, time, json, sys
from facttok import data as D
from facttok import evaluate as E
from facttok import model as M
from facttok import training as TR

WIDTH = int(sys.argv[1]) if len(sys.argv) > 1 else 96
STEPS = int(sys.argv[2]) if len(sys.argv) > 2 else 3500
LR = float(sys.argv[3]) if len(sys.argv) > 3 else 1e-3
BS = int(sys.argv[4]) if len(sys.argv) > 4 else 16

spec = D.CorpusSpec()
episodes = D.generate_synthetic_corpus(spec, seed=0)
task_ids = sorted({ep.task_id for ep in episodes})
train_tasks, test_tasks = D.split_task_ids(task_ids, (40, 1), seed=0)
stats = D.compute_norm_stats([ep for ep in episodes if ep.task_id in set(train_tasks)])
chunks, _ = D.chunk_episodes(episodes, 32, 16)
train = [D.standardize(c, stats) for c in chunks if c.task_id in set(train_tasks)]
test = [D.standardize(c, stats) for c in chunks if c.task_id in set(test_tasks)]
arr = np.stack([c.values for c in train]).astype(np.float32)
print(f"train {len(train)} test {len(test)} ({test_tasks})", flush=True)

cfg = M.TokenizerConfig(width=WIDTH, seed=0)
tcfg = TR.TrainConfig(steps=STEPS, batch_size=BS, lr=LR, warmup_steps=300, seed=0)
state = TR.TrainState(cfg, tcfg)
t0 = time.perf_counter()
for k in range(STEPS):
    row = TR.train_step(state, arr)
    if k % 250 == 0:
        print(f"step {k}: flow {row['loss_flow']:.4f} ent {row['loss_entropy']:.4f} commit {row['loss_commit']:.4f}", flush=True)
train_min = (time.perf_counter() - t0) / 60
print(f"trained {STEPS} steps in {train_min:.1f} min", flush=True)
TR.save_state(state, f".calib/corpus_w{WIDTH}_s{STEPS}.fact")

fact = M.FactTokenizer(cfg, state.params, stats)
t0 = time.perf_counter()
rec = E.eval_reconstruction(fact, test, seed=0)
print(f"FACT: mse {rec.mse:.3e} len {rec.code_length} eval took {(time.perf_counter()-t0)/60:.1f} min", flush=True)

probs = []
stacked = np.stack([c.values for c in test]).astype(np.float32)
for s in range(0, len(stacked), 64):
    e = M.encode_batch(state.params, cfg, stacked[s:s+64]).data
    probs.append(1.0 / (1.0 + np.exp(-2.0 * e)))
marg = np.concatenate(probs).mean(axis=0).reshape(-1)
frac = float(np.mean((marg >= 0.1) & (marg <= 0.9)))
print(f"codebook usage: {frac*100:.1f}% of bit positions in [0.1, 0.9]", flush=True)

train_values = [c.values for c in train]
matching, evaluated = E.match_fast_code_length(
    train_values, test, target_len=rec.code_length, tolerance=0.1,
    scales=(2.0, 10.0, 32.0, 100.0, 316.0, 1000.0), merge_budget=512, seed=0)
for tok, r in sorted(evaluated, key=lambda tr: tr[1].code_length):
    mark = " <-- match" if any(t2 is tok for t2, _ in matching) else ""
    print(f"fast scale {tok.spec.quant_scale:8.2f}: len {r.code_length:7.1f} mse {r.mse:.3e}{mark}", flush=True)
if matching:
    best_match = min(matching, key=lambda tr: tr[1].mse)[1]
    print(f"RATIO fast/fact: {best_match.mse / rec.mse:.1f}x (need >= 5)", flush=True)

btok = E.BinningTokenizer.fit(train_values, 32, 7, bins=256, budget=int(round(rec.code_length)))
brec = E.eval_reconstruction(btok, test, seed=0)
print(f"binning truncated: mse {brec.mse:.3e}; RATIO bin/fact: {brec.mse / rec.mse:.1f}x", flush=True)
json.dump(dict(width=WIDTH, steps=STEPS, lr=LR, bs=BS, fact_mse=rec.mse,
               usage=frac, minutes=train_min),
          open(f".calib/corpus_w{WIDTH}_s{STEPS}.json", "w"))
