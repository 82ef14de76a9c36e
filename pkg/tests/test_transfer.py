import hashlib
import math

import numpy as np
import pytest

from graspmc import sampler
from graspmc.errors import GraspMCError
from graspmc.geometry import Grasp
from graspmc.history import ChainHistory, ChainRecord, dumps_history
from graspmc.kernel import proposal_covariance
from graspmc.sampler import InitSpec, KameleonConfig, run_chain
from graspmc.transfer import (
    init_from_chain,
    init_from_subsample,
    load_history,
    save_history,
    subsample_config,
    transfer_experiment,
)


class BlobTarget:
    name = "blob"

    def evaluate(self, g):
        r2 = float(g.position @ g.position)
        return 1e-3 + math.exp(-r2 / (2 * 0.05 ** 2)), r2 < 0.02 ** 2

    def random_grasp(self, rng):
        q = rng.standard_normal(4)
        return Grasp(rng.uniform(-0.1, 0.1, 3), q / np.linalg.norm(q))


def make_history(flags):
    rng = np.random.default_rng(0)
    recs = []
    for i, acc in enumerate(flags):
        q = rng.standard_normal(4)
        recs.append(ChainRecord(i, Grasp(rng.normal(size=3), q / np.linalg.norm(q)), 0.5, False,
                                acc, 1.0))
    return ChainHistory(recs, {"object": "donor"})


@pytest.fixture(scope="module")
def donor():
    return run_chain(BlobTarget(), InitSpec(), KameleonConfig(n_iters=300, burn_in=100, seed=1),
                     object_id="blob")


def test_single_accepted_record_is_the_start():
    h = make_history([False, False, True, False])
    for s in range(20):
        assert init_from_chain(h, np.random.default_rng(s)).start_index == 2


def test_start_index_deterministic_and_uniform():
    flags = [i % 3 == 0 for i in range(30)]  # 10 accepted records
    h = make_history(flags)
    assert init_from_chain(h, np.random.default_rng(7)).start_index == \
        init_from_chain(h, np.random.default_rng(7)).start_index
    rng = np.random.default_rng(8)
    idx = [init_from_chain(h, rng).start_index for _ in range(1000)]
    counts = np.bincount(idx, minlength=30)
    assert counts[~np.array(flags)].sum() == 0
    sd = math.sqrt(0.1 * 0.9 / 1000)
    assert np.all(np.abs(counts[np.array(flags)] / 1000 - 0.1) <= 3 * sd)


def test_no_accepted_states():
    with pytest.raises(GraspMCError) as e:
        init_from_chain(make_history([False, False]), np.random.default_rng(0))
    assert e.value.code == "no-accepted-states"


def test_subsample_init_carries_frozen_z(donor):
    spec = init_from_subsample(donor)
    z = donor.metadata["frozen_subsample"]
    assert z.shape == (200, 7)
    assert np.array_equal(spec.z, z)
    assert np.array_equal(spec.start.vector, z[-1])


def test_no_frozen_subsample():
    h = run_chain(BlobTarget(), InitSpec(), KameleonConfig(n_iters=20, burn_in=0, seed=0))
    with pytest.raises(GraspMCError) as e:
        init_from_subsample(h)
    assert e.value.code == "no-frozen-subsample"


def test_subsample_mode_forbids_burn_in(donor):
    with pytest.raises(GraspMCError) as e:
        transfer_experiment(donor, _blob_scene(), "subsample", KameleonConfig(n_iters=50, burn_in=10))
    assert e.value.code == "subsample-mode-forbids-burnin"


def test_subsample_config_budget(donor):
    cfg = subsample_config(donor)
    assert cfg.burn_in == 0 and cfg.n_iters == 200
    assert cfg.gamma == donor.metadata["params"]["gamma"]


def _spy_proposals(monkeypatch):
    made = []

    class Spy(sampler.GaussianProposal):
        def __init__(self, *a, **kw):
            super().__init__(*a, **kw)
            made.append(self)

    monkeypatch.setattr(sampler, "GaussianProposal", Spy)
    return made


def test_subsample_mode_reproduces_donor_covariance(donor, tmp_path, monkeypatch):
    path = tmp_path / "donor.jsonl"
    save_history(donor, path)
    loaded = load_history(path)
    made = _spy_proposals(monkeypatch)
    cfg = subsample_config(loaded)
    h = run_chain(BlobTarget(), init_from_subsample(loaded), cfg, np.random.default_rng(3))
    assert len(h) == cfg.n_iters + 1
    # one proposal object, built once from the donor's z and never refreshed
    assert len(made) == 1
    z = donor.metadata["frozen_subsample"]
    assert np.array_equal(made[0].z, z)
    start = z[-1]
    p = KameleonConfig()
    want = proposal_covariance(z, start, p.gamma, p.nu, p.kernel, sigma=donor.metadata["frozen_sigma"])
    assert np.abs(made[0].covariance(start) - want).max() <= 1e-12


def test_roundtrip(donor, tmp_path):
    path = tmp_path / "h.jsonl"
    save_history(donor, path)
    again = load_history(path)
    assert dumps_history(again) == dumps_history(donor)
    assert len(again) == len(donor)
    for a, b in zip(again.records, donor.records):
        assert np.array_equal(a.proposal.vector, b.proposal.vector)
        assert (a.iter, a.measure, a.feasible, a.accepted, a.temperature) == \
            (b.iter, b.measure, b.feasible, b.accepted, b.temperature)


def test_empty_and_long_histories(tmp_path):
    save_history(ChainHistory([], {"object": "x"}), tmp_path / "e.jsonl")
    e = load_history(tmp_path / "e.jsonl")
    assert len(e) == 0 and e.metadata["object"] == "x"
    g = Grasp(np.zeros(3), np.array([1.0, 0, 0, 0]))
    long = ChainHistory([ChainRecord(i, g, 0.01, False, True, 1.0) for i in range(5000)], {})
    save_history(long, tmp_path / "l.jsonl")
    assert len((tmp_path / "l.jsonl").read_text().splitlines()) == 5001


def test_io_errors(tmp_path):
    with pytest.raises(GraspMCError) as e:
        load_history(tmp_path / "missing.jsonl")
    assert e.value.code == "io-error"
    (tmp_path / "bad.jsonl").write_text('{"version": 99}\n')
    with pytest.raises(GraspMCError):
        load_history(tmp_path / "bad.jsonl")


def _blob_scene():
    from graspmc.experiments import Scene
    from graspmc.geometry import PointCloud, RigidTransform, RimSet
    from graspmc.grasp_model import SyntheticObject

    t = BlobTarget()
    return Scene("blob2", SyntheticObject("plate"), PointCloud(np.zeros((1, 3))),
                 RimSet(np.zeros((1, 3))), t, RigidTransform(), None)


def test_chain_transfer_keeps_donor_and_records_provenance(donor, tmp_path):
    path = tmp_path / "donor.jsonl"
    save_history(donor, path)
    before = hashlib.sha256(path.read_bytes()).hexdigest()
    loaded = load_history(path)
    cfg = KameleonConfig(n_iters=120, burn_in=40, seed=11)
    a = transfer_experiment(loaded, _blob_scene(), "chain", cfg)
    assert hashlib.sha256(path.read_bytes()).hexdigest() == before
    assert dumps_history(loaded) == path.read_text()
    assert a.metadata["donor"] == "blob" and a.metadata["transfer_mode"] == "chain"
    b = transfer_experiment(load_history(path), _blob_scene(), "chain", cfg)
    assert dumps_history(a) == dumps_history(b)


def test_subsample_transfer_provenance(donor):
    h = transfer_experiment(donor, _blob_scene(), "subsample", dataclass_seed(subsample_config(donor), 5))
    assert h.metadata["transfer_mode"] == "subsample" and h.metadata["donor"] == "blob"
    assert np.array_equal(h.metadata["frozen_subsample"], donor.metadata["frozen_subsample"])


def test_unknown_mode(donor):
    with pytest.raises(GraspMCError):
        transfer_experiment(donor, _blob_scene(), "teleport")


def dataclass_seed(cfg, seed):
    import dataclasses
    return dataclasses.replace(cfg, seed=seed)
