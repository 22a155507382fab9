"""Prototype of the heavy acceptance runs to validate tolerances/seeds before
freezing tests. Not part of the deliverable."""
import time

import numpy as np

import mixdiff as md
from mixdiff.targets import Ar1Temporal, GaussianSpec

DIMS = (8, 1, 4, 4)
N = 10_000
SEED = 2026


def battery_std():
    sched = md.make_schedule(1000, sigma_kind="beta")
    sm = md.make_step_map(1000, 50)
    tgt = md.standard_normal_target(DIMS)
    vden = md.AnalyticGaussianDenoiser(tgt, sched)
    iden = md.AnalyticGaussianDenoiser(tgt.frame_marginal(), sched)
    policies = {
        "video_only": md.VIDEO_ONLY,
        "image_only": md.IMAGE_ONLY,
        "64": md.PRESET_POLICIES["64"],
        "128": md.PRESET_POLICIES["128"],
        "256": md.PRESET_POLICIES["256"],
    }
    results = {}
    for j, (name, pol) in enumerate(policies.items()):
        t0 = time.perf_counter()
        outs = np.empty((N,) + DIMS)
        base = SEED + 1000 * j
        for i in range(N):
            s, _ = md.run_mixture_sampling(
                vden, iden, pol, sched, sm, dims=DIMS,
                guidance=1.0, entropy=md.EntropyConfig(),
                init_rng=md.RngStream(base, i),
                noise_rng=md.RngStream(base + 1, i),
                select_rng=md.RngStream(base + 2, i),
            )
            outs[i] = s.data
        dt = time.perf_counter() - t0
        vals = outs.reshape(N, -1)
        pooled_mean = vals.mean()
        per_entry_var = vals.var(axis=0, ddof=1)
        pooled_var = vals.var(ddof=1)
        total = vals.size
        hw_mean = 1.96 * np.sqrt(pooled_var / total)
        hw_var = 1.96 * pooled_var * np.sqrt(2.0 / (total - 1))
        w2 = md.gaussian_w2([pooled_mean], [pooled_var], [0.0], [1.0])
        results[name] = dict(
            mean=pooled_mean, var=pooled_var, maxvardev=np.abs(per_entry_var - 1).max(),
            w2=w2, hw_mean=hw_mean, hw_var=hw_var, secs=dt,
        )
        print(f"[std {name}] mean={pooled_mean:+.5f} pooled_var={pooled_var:.5f} "
              f"maxvardev={results[name]['maxvardev']:.4f} w2={w2:.5f} ({dt:.0f}s)", flush=True)
    names = list(results)
    ok = True
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            ra, rb = results[names[a]], results[names[b]]
            dm = abs(ra["mean"] - rb["mean"])
            dv = abs(ra["var"] - rb["var"])
            okm = dm <= ra["hw_mean"] + rb["hw_mean"]
            okv = dv <= ra["hw_var"] + rb["hw_var"]
            if not (okm and okv):
                ok = False
                print(f"  PAIRFAIL {names[a]} vs {names[b]}: dmean={dm:.5f} "
                      f"lim={ra['hw_mean']+rb['hw_mean']:.5f} dvar={dv:.5f} "
                      f"lim={ra['hw_var']+rb['hw_var']:.5f}", flush=True)
    print("pairwise ok:", ok, flush=True)


def battery_ar1():
    sched = md.make_schedule(1000, sigma_kind="beta")
    sm = md.make_step_map(1000, 50)
    tgt = GaussianSpec(dims=DIMS, mean=0.0, cov=Ar1Temporal(rho=0.9))
    vden = md.AnalyticGaussianDenoiser(tgt, sched)
    iden = md.AnalyticGaussianDenoiser(tgt.frame_marginal(), sched)
    for name, pol in [("image_only", md.IMAGE_ONLY),
                      ("mix128", md.PRESET_POLICIES["128"]),
                      ("video_only", md.VIDEO_ONLY)]:
        t0 = time.perf_counter()
        outs = np.empty((N,) + DIMS)
        for i in range(N):
            s, _ = md.run_mixture_sampling(
                vden, iden, pol, sched, sm, dims=DIMS,
                guidance=1.0, entropy=md.EntropyConfig(),
                init_rng=md.RngStream(SEED + 11, i),
                noise_rng=md.RngStream(SEED + 12, i),
                select_rng=md.RngStream(SEED + 13, i),
            )
            outs[i] = s.data
        ac = md.temporal_autocorr(list(outs), 1)
        print(f"[ar1 {name}] lag1={ac:.5f} ({time.perf_counter()-t0:.0f}s)", flush=True)


if __name__ == "__main__":
    battery_std()
    battery_ar1()
