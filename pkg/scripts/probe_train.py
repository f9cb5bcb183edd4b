"""Dev probe: desk-scale training feasibility check (not shipped as a test)."""
import sys
import time

import numpy as np

from hsbinn import training
from hsbinn.capmodel import DrugConfig
from hsbinn.solver import resting_state, solve
from hsbinn.losses import ObservationSet

mode = sys.argv[1] if len(sys.argv) > 1 else "sbinn"
iters = int(sys.argv[2]) if len(sys.argv) > 2 else 2000
q = int(sys.argv[3]) if len(sys.argv) > 3 else 1
fraction = float(sys.argv[4]) if len(sys.argv) > 4 else 0.05
seed = int(sys.argv[5]) if len(sys.argv) > 5 else 0

spec = training.DatasetSpec(q=q, seed=seed)
configs = training.generate_dataset(spec)
rng = np.random.default_rng([spec.seed, 1])
obs, trajs = training.build_observations(configs, fraction=fraction, rng=rng)
print(f"obs: {len(obs)} points over {q} configs")
u0 = resting_state(-85.0)
cfg = training.TrainConfig(iters=iters, seed=seed)

t0 = time.time()
with open(f"/tmp/hist_{mode}_{q}_{seed}.jsonl", "w") as lf:
    ckpt, hist = training.train(configs, obs, u0, cfg, mode=mode, dataset=spec,
                                log_file=lf)
dt = time.time() - t0
print(f"{mode} {iters} iters in {dt/60:.1f} min ({dt/iters*1e3:.1f} ms/iter)")

tot = np.array([h["loss_total"] for h in hist])


def smooth(x, w=100):
    if x.size < w:
        return x
    c = np.convolve(x, np.ones(w) / w, mode="valid")
    return c


s = smooth(tot)
print(f"loss start {s[0]:.4g}  end {s[-1]:.4g}  drop x{s[0]/s[-1]:.1f}")
for frac_i in (0, len(hist)//4, len(hist)//2, 3*len(hist)//4, len(hist)-1):
    h = hist[frac_i]
    print(f"  iter {h['iter']:6d} total {h['loss_total']:.4g} data {h['loss_data']:.4g} ic {h['loss_ic']:.4g}")

# nsd of V and APD90 error against the solver for each config
from hsbinn.biomarkers import apd90

for i, (c, tr) in enumerate(zip(configs, trajs)):
    pred = ckpt.predict(c, tr.t)
    vr = tr.v
    nsd = ((pred[:, 0] - vr) ** 2).mean() / (vr.max() - vr.min()) ** 2
    b_ref = apd90(tr.t, vr)
    b_hat = apd90(tr.t, pred[:, 0])
    if b_ref.valid and b_hat.valid:
        err = abs(b_hat.apd90 - b_ref.apd90)
        print(f"config {i}: V nsd = {nsd:.4g}  APD90 {b_ref.apd90:.2f} vs {b_hat.apd90:.2f}  |d|={err:.3f} ms")
    else:
        print(f"config {i}: V nsd = {nsd:.4g}  APD invalid ({b_ref.valid}/{b_hat.valid})")
