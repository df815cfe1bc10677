import numpy as np, time, json
from facttok import data as D
from facttok import evaluate as E
from facttok import model as M
from facttok import training as TR

spec = D.CorpusSpec()
episodes = D.generate_synthetic_corpus(spec, seed=0)
task_ids = sorted({ep.task_id for ep in episodes})
train_tasks, test_tasks = D.split_task_ids(task_ids, (40, 1), seed=0)
stats = D.compute_norm_stats([ep for ep in episodes if ep.task_id in set(train_tasks)])
chunks, _ = D.chunk_episodes(episodes, 32, 16)
train = [D.standardize(c, stats) for c in chunks if c.task_id in set(train_tasks)]
test = [D.standardize(c, stats) for c in chunks if c.task_id in set(test_tasks)]
arr = np.stack([c.values for c in train]).astype(np.float32)
test_small = test[:48]

def probe(state, cfg):
    stacked = np.stack([c.values for c in test_small]).astype(np.float32)
    e = M.encode_batch(state.params, cfg, stacked).data
    bits = np.where(e >= 0, 1.0, -1.0)
    hard = (bits > 0).mean(axis=0).reshape(-1)          # hard marginal frequency
    mid = float(np.mean((hard >= 0.1) & (hard <= 0.9)))
    codes = {tuple(M.bits_to_token_ids(b)) for b in bits}
    fact = M.FactTokenizer(cfg, state.params, stats)
    rec = E.eval_reconstruction(fact, test_small, seed=0)
    return mid, len(codes), rec.mse

for tag, ew, cw, temp in [
    ("base",        0.1, 0.25, 1.0),
    ("e.3 c.25 t2", 0.3, 0.25, 2.0),
    ("e.1 c.05 t1", 0.1, 0.05, 1.0),
    ("e.3 c.05 t2", 0.3, 0.05, 2.0),
    ("e.5 c.1 t4",  0.5, 0.10, 4.0),
]:
    cfg = M.TokenizerConfig(width=96, entropy_weight=ew, commit_weight=cw,
                            entropy_temp=temp, seed=0)
    tcfg = TR.TrainConfig(steps=1200, batch_size=16, lr=1e-3, warmup_steps=300, seed=0)
    state = TR.TrainState(cfg, tcfg)
    t0 = time.perf_counter()
    ents = []
    for k in range(1200):
        row = TR.train_step(state, arr)
        ents.append(row["loss_entropy"])
    mid, n_codes, mse = probe(state, cfg)
    print(json.dumps(dict(tag=tag, ent_last100=float(np.mean(ents[-100:])),
                          flow_last=row["loss_flow"], usage_hard=mid,
                          distinct_codes=n_codes, eval_mse=mse,
                          minutes=round((time.perf_counter()-t0)/60, 1))), flush=True)
