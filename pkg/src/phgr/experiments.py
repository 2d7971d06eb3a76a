"""Named ablation variants and the small synthetic benchmark used by scripts and checks."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import item_counts, split, synth_hierarchical
from .evaluation import evaluate, evaluate_popularity, region_analysis
from .graphs import build_global_graph
from .model import ModelConfig
from .training import TrainConfig, fit

# name -> ModelConfig overrides
ABLATIONS = {
    "PHGR": {},
    "EHGR": {"variant": "euclidean"},
    "w/o-IP": {"inner": "P"},
    "w/o-G": {"no_global": True},
    "w/o-L": {"no_local": True},
    "w/o-Long": {"no_long": True},
    "w/o-Short": {"no_short": True},
    "w/o-L&S": {"no_long": True, "no_short": True},
}


def ablation_config(base: ModelConfig, name: str) -> ModelConfig:
    if name not in ABLATIONS:
        raise KeyError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
    return replace(base, **ABLATIONS[name])


def item_points(params: dict, cfg: ModelConfig) -> np.ndarray:
    """Item embeddings as points in the model space (reserved row dropped)."""
    from .autodiff import Tensor

    emb = params["item_emb"][:-1]
    return cfg.space.exp0(Tensor(emb)).value


@dataclass
class DeskResult:
    seed: int
    hit: dict                       # variant -> H@10 on test
    regions: list                   # mean training interactions per region, full model
    seconds: float
    epochs: dict = field(default_factory=dict)

    @property
    def regions_nonincreasing(self) -> bool:
        r = self.regions
        return all(a >= b for a, b in zip(r, r[1:]))


def desk_scale_run(seed: int, n_users: int = 2000, m_items: int = 500, power_exponent: float = 2.0,
                   variants=("PHGR", "w/o-L&S"), model_cfg: ModelConfig | None = None,
                   train_cfg: TrainConfig | None = None, progress=None) -> DeskResult:
    """Generate, split, train each variant and compare against popularity on the test split."""
    t0 = time.time()
    ds = split(synth_hierarchical(n_users, m_items, power_exponent, seed=seed), seed=seed)
    base = model_cfg or ModelConfig()
    tc = replace(train_cfg or TrainConfig(), seed=seed)
    graph = build_global_graph(ds.train, ds.n_users, ds.n_items)
    hit, epochs, regions = {}, {}, []
    for name in variants:
        cfg = ablation_config(base, name)
        res = fit(ds, cfg, tc)
        hit[name] = evaluate(res.params, graph, ds.test, cfg, (10,)).hit[10]
        epochs[name] = res.stopped_epoch
        if name == variants[0]:
            rep = region_analysis(item_points(res.params, cfg), item_counts(ds.train, ds.n_items),
                                  variant=cfg.variant, c=cfg.curvature)
            regions = rep.mean_interactions
        if progress:
            progress(name, hit[name], res.stopped_epoch)
    hit["popularity"] = evaluate_popularity(ds.train, ds.test, ds.n_items, (10,)).hit[10]
    return DeskResult(seed, hit, regions, time.time() - t0, epochs)
