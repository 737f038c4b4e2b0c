import itertools

import numpy as np
import pytest

from radar_pho import dataset as D
from radar_pho import dualnet as dn
from radar_pho import federated as F

from helpers import make_client


def _rand_params(seed):
    return dn.init(seed)


def test_fedavg_single_identity():
    p = _rand_params(1)
    assert F.fedavg([(p, 7)]).allclose(p)


def test_fedavg_weights():
    a, b = _rand_params(1), _rand_params(2)
    out = F.fedavg([(a, 10_000), (b, 30_000)])
    for k in dn.PARAM_ORDER:
        assert np.allclose(out[k], 0.25 * a[k] + 0.75 * b[k], rtol=0, atol=1e-15)


def test_fedavg_identical_params():
    p = _rand_params(3)
    assert F.fedavg([(p.copy(), 3), (p.copy(), 9)]).allclose(p, atol=1e-15)


def test_fedavg_errors():
    with pytest.raises(F.AggregationError):
        F.fedavg([])
    with pytest.raises(F.AggregationError):
        F.fedavg([(_rand_params(0), 0), (_rand_params(1), 0)])
    bad = _rand_params(0)
    bad.arrays["W1"] = np.zeros((3, 3))
    with pytest.raises(F.AggregationError, match="W1"):
        F.fedavg([(_rand_params(1), 1), (bad, 1)])


def test_fedavg_permutation_invariant_and_convex():
    ups = [(_rand_params(s), n) for s, n in zip(range(4), (5, 1, 9, 3))]
    ref = F.fedavg(ups)
    for perm in itertools.permutations(ups):
        assert F.fedavg(list(perm)).allclose(ref, atol=1e-15)
    for k in dn.PARAM_ORDER:
        stack = np.stack([p[k] for p, _ in ups])
        assert np.all(ref[k] >= stack.min(0) - 1e-15) and np.all(ref[k] <= stack.max(0) + 1e-15)


def test_single_client_matches_centralized():
    c = make_client("SBS2", 500, seed=3)
    c_ref = make_client("SBS2", 500, seed=3)
    p0 = dn.init(5)
    params, hist = F.run_rounds([c], p0, F.StoppingConfig(max_rounds=5, enabled=False), local_epochs=1)
    central = dn.train(p0, c_ref.nn_batch(c_ref.splits.train), epochs=5, batch_size=c.batch_size,
                       seed=c.seed, lr=c.lr)
    assert len(hist) == 5
    assert np.max(np.abs(params.flat() - central.params.flat())) <= 1e-9


def test_zero_rounds_returns_initial():
    p0 = dn.init(1)
    params, hist = F.run_rounds([make_client("SBS1", 200)], p0, F.StoppingConfig(max_rounds=0))
    assert hist == [] and params.allclose(p0)


def test_zero_clients_error():
    with pytest.raises(ValueError):
        F.run_rounds([], dn.init(0))


class FrozenClient(F.Client):
    def local_update(self, global_params, epochs):
        return F.ClientUpdate(self.client_id, global_params.copy(), 10, 0.0)


def test_plateau_stops_after_patience():
    c = make_client("SBS1", 200)
    frozen = FrozenClient(c.client_id, c.geometry, c.splits)
    _, hist = F.run_rounds([frozen], dn.init(0), F.StoppingConfig(patience=3, max_rounds=30))
    assert len(hist) == 3 and hist[-1].stop and not any(r.stop for r in hist[:-1])


class AuditedSplits(D.Splits):
    """Counts reads of the training split made outside local updates."""
    def __init__(self, sp):
        self.__dict__.update(train_=sp.train, eval=sp.eval, personal=sp.personal, leaks=0, inside=False)

    @property
    def train(self):
        if not self.inside:
            self.leaks += 1
        return self.train_


class AuditedClient(F.Client):
    def local_update(self, global_params, epochs):
        self.splits.inside = True
        try:
            return super().local_update(global_params, epochs)
        finally:
            self.splits.inside = False


def test_server_never_reads_training_data():
    clients = []
    for sid in ("SBS1", "SBS2"):
        base = make_client(sid, 300)
        sp = AuditedSplits(base.splits)
        clients.append(AuditedClient(sid, base.geometry, sp, scaler=base.scaler))
    for c in clients:
        c.splits.leaks = 0
    F.run_rounds(clients, dn.init(0), F.StoppingConfig(max_rounds=2, enabled=False), local_epochs=1)
    assert [c.splits.leaks for c in clients] == [0, 0]


def test_round_count_bounded_and_reports():
    cs = [make_client(s, 300, seed=i) for i, s in enumerate(("SBS3", "SBS1"))]
    _, hist = F.run_rounds(cs, dn.init(0), F.StoppingConfig(max_rounds=4), local_epochs=1)
    assert len(hist) <= 4
    assert [c["client_id"] for c in hist[0].clients] == ["SBS1", "SBS3"]
    total = sum(c.n_train for c in cs)
    assert sum(c["n_samples"] for c in hist[0].clients) == total
    assert '"round": 1' in hist[0].to_json()


def test_personalise_zero_epochs_unchanged():
    c = make_client("SBS4", 400)
    p = dn.init(0)
    rep = F.personalise(c, p, tune_epochs=0)
    assert rep.params.allclose(p) and rep.after == rep.before


def test_personalise_deterministic():
    c = make_client("SBS5", 400)
    p = dn.init(0)
    a, b = F.personalise(c, p, 3, seed=2), F.personalise(c, p, 3, seed=2)
    assert a.params.allclose(b.params)


def test_new_client_never_in_rounds():
    fl = [make_client("SBS1", 300), make_client("SBS2", 300)]
    new = make_client("SBS6", 300)
    params, hist = F.run_rounds(fl, dn.init(0), F.StoppingConfig(max_rounds=2, enabled=False), local_epochs=2)
    assert all("SBS6" not in {c["client_id"] for c in r.clients} for r in hist)
    rep, _ = F.transfer_to_new_client(new, params, 5)
    assert rep.mae_improvement == pytest.approx((rep.pushed.mae - rep.tuned.mae) / rep.pushed.mae)
