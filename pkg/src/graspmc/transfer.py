"""Reusing chains across objects.

Two ways to seed a Kameleon run on a novel object:

* ``chain``: the donor's whole history becomes the prior chain history the
  new run subsamples from; the new run starts at a random accepted donor
  state and performs its own burn-in.
* ``subsample``: the donor's subsample frozen at the end of its burn-in is
  reused as is; the run starts at its last element, skips burn-in and never
  adapts.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .errors import GraspMCError
from .geometry import Grasp
from .history import load_history, save_history
from .sampler import InitSpec, KameleonConfig, run_chain

__all__ = ["save_history", "load_history", "init_from_chain", "init_from_subsample",
           "subsample_config", "transfer_experiment"]


def init_from_chain(history, rng, donor=None):
    accepted = [i for i, r in enumerate(history.records) if r.accepted]
    if not accepted:
        raise GraspMCError("no-accepted-states")
    start = accepted[int(rng.integers(len(accepted)))]
    return InitSpec("chain", history=history, start_index=start,
                    donor=donor or history.metadata.get("object"))


def init_from_subsample(history, donor=None):
    z = history.frozen_subsample
    if z is None or len(z) == 0:
        raise GraspMCError("no-frozen-subsample")
    return InitSpec("subsample", z=z, start=Grasp.from_vector(z[-1], exact=True),
                    donor=donor or history.metadata.get("object"))


def subsample_config(donor, base=None):
    """Kameleon config for a subsample-mode run seeded by ``donor``.

    Burn-in is zero and the iteration budget is the donor's post-burn-in
    budget; kernel and step parameters are taken from the donor unless
    ``base`` is given.
    """
    params = donor.metadata.get("params", {})
    if base is None:
        keep = {f.name for f in dataclasses.fields(KameleonConfig)}
        kw = {k: v for k, v in params.items() if k in keep and k not in ("burn_in", "n_iters")}
        base = KameleonConfig(burn_in=0, **kw)
    n = int(params.get("n_iters", base.n_iters)) - int(params.get("burn_in", 0))
    return dataclasses.replace(base, burn_in=0, n_iters=max(n, 0))


def transfer_experiment(donor, novel, mode, cfg=None, rng=None, **scene_kwargs):
    """Run Kameleon on ``novel`` (a SyntheticObject or prepared Scene) seeded by ``donor``.

    The novel object is aligned to its canonical pose first.  The donor
    history is never modified.
    """
    from .experiments import Scene, prepare_scene

    scene = novel if isinstance(novel, Scene) else prepare_scene(novel, **scene_kwargs)
    if mode == "chain":
        cfg = cfg or KameleonConfig()
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        init = init_from_chain(donor, rng)
    elif mode == "subsample":
        cfg = cfg or subsample_config(donor)
        if cfg.burn_in > 0:
            raise GraspMCError("subsample-mode-forbids-burnin", f"burn_in={cfg.burn_in}")
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        init = init_from_subsample(donor)
    else:
        raise GraspMCError("bad-init", f"unknown transfer mode {mode!r}")
    hist = run_chain(scene.target, init, cfg, rng, object_id=scene.name)
    hist.metadata["transfer_mode"] = mode
    hist.metadata["donor"] = init.donor
    return hist
