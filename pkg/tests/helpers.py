import numpy as np

from radar_pho import dataset as D
from radar_pho import federated as F
from radar_pho import scene


def make_client(sid, n=600, seed=0, **kw):
    cfg = scene.scenario_config(sid, n_samples=n, rng_seed=seed)
    ds = D.from_oracle(scene.build_scenario(cfg))
    sp = D.split(ds, np.random.default_rng(seed + 100))
    return F.Client(sid, cfg, sp, seed=seed, **kw)
