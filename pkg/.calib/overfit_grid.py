import numpy as np, time, json, sys
from facttok import model as M
from facttok import training as TR
from facttok import data as D

# realistic frozen batch: chunks from the default synthetic corpus, standardized
spec = D.CorpusSpec(n_tasks=6, episodes_per_task=2, steps=96)
episodes = D.generate_synthetic_corpus(spec, seed=0)
stats = D.compute_norm_stats(episodes)
chunks_all, _ = D.chunk_episodes(episodes, 32, 16)
std = np.stack([D.standardize(c, stats).values for c in chunks_all]).astype(np.float32)
print(f"corpus chunks: {len(std)}", flush=True)

results = []
for width, blocks, lr, bs in [
    (128, 4, 3e-4, 8), (128, 4, 1e-3, 8),
    (96, 4, 1e-3, 8), (96, 4, 1e-3, 16), (96, 4, 3e-3, 16),
    (64, 4, 1e-3, 16), (64, 4, 3e-3, 16), (64, 3, 3e-3, 16),
]:
    cfg = M.TokenizerConfig(width=width, enc_blocks=blocks, dec_blocks=blocks, heads=4, seed=0)
    frozen = std[:bs]
    tcfg = TR.TrainConfig(steps=2000, batch_size=bs, lr=lr, warmup_steps=200, seed=1)
    state = TR.TrainState(cfg, tcfg)
    t0 = time.perf_counter()
    hit = None
    flows = []
    for k in range(2000):
        row = TR.train_step(state, frozen)
        flows.append(row["loss_flow"])
        if hit is None and row["loss_flow"] < 1e-2:
            hit = k
    dt = time.perf_counter() - t0
    res = dict(width=width, blocks=blocks, lr=lr, bs=bs, final=flows[-1],
               best=min(flows), hit_step=hit, minutes=dt / 60)
    results.append(res)
    print(json.dumps(res), flush=True)
json.dump(results, open(".calib/overfit_grid.json", "w"), indent=1)
