"""One-factor-at-a-time ablations around a base hybrid configuration.

Axes: adapter direction, number of adapter layers K, adapter placement and
event time steps T, plus an RGB-only baseline. Variants that coincide with
the base configuration are trained once and reused.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import torch

from ..energy import count_ops, estimate_energy
from ..tracker import TrackerConfig
from .evaluation import evaluate_model
from .training import TrainConfig, train_loop

log = logging.getLogger(__name__)

AXES = {
    "direction": [{"direction": "bi"}, {"direction": "e2i"}, {"direction": "i2e"}],
    "adapter_layers": [{"adapter_layers": 0}, {"adapter_layers": 2}, {"adapter_layers": 4}],
    "placement": [{"placement": "first"}, {"placement": "last"}],
    "time_steps": [{"time_steps": 1}, {"time_steps": 3}],
    "modality": [{"modality": "hybrid"}, {"modality": "rgb"}],
}


def variant_config(base: TrackerConfig, change: dict) -> TrackerConfig:
    d = base.to_dict()
    d.update(change)
    k = d["adapter_layers"]
    # K adapters need K spiking layers to pair with
    if d["modality"] == "hybrid" and k > d["snn_depth"]:
        d["snn_depth"] = k
        d["ann_depth"] = max(d["ann_depth"], k)
    return TrackerConfig.from_dict(d)


def ablation_variants(base: TrackerConfig, axes: dict | None = None) -> list[tuple[str, str, TrackerConfig]]:
    """(axis, label, config) for every setting on every axis."""
    out = []
    for axis, changes in (axes or AXES).items():
        for change in changes:
            label = ",".join(f"{k}={v}" for k, v in change.items())
            out.append((axis, label, variant_config(base, change)))
    return out


def _energy(model, cfg: TrackerConfig) -> float:
    t = cfg.time_steps
    sample = (torch.zeros(1, 3, cfg.template_size, cfg.template_size),
              torch.zeros(1, 3, cfg.search_size, cfg.search_size),
              torch.zeros(1, t, 3, cfg.template_size, cfg.template_size),
              torch.zeros(1, t, 3, cfg.search_size, cfg.search_size))
    return estimate_energy(count_ops(model, sample))[2]


def run_ablation(base: TrackerConfig, tcfg: TrainConfig, train_seqs, test_seqs, seed: int = 0,
                 out_dir=None, axes: dict | None = None) -> list[dict]:
    """Train and evaluate every variant; returns one table row per (axis, setting)."""
    cache: dict[str, dict] = {}
    rows = []
    for axis, label, cfg in ablation_variants(base, axes):
        key = repr(sorted(cfg.to_dict().items()))
        if key not in cache:
            log.info("ablation %s: %s", axis, label)
            sub = None if out_dir is None else Path(out_dir) / f"variant_{len(cache):02d}"
            res = train_loop(cfg, tcfg, train_seqs, seed, out_dir=sub)
            pooled, _ = evaluate_model(res.model, test_seqs)
            entry = {"params": sum(p.numel() for p in res.model.parameters()),
                     "energy_mJ": _energy(res.model, cfg), "train_s": res.seconds,
                     "final_loss": res.losses[-1]["total"]}
            for split, r in pooled.items():
                for k, v in r.scalars(percent=True).items():
                    entry[f"{split}_{k}"] = v
            cache[key] = entry
        rows.append({"axis": axis, "setting": label, **cache[key]})
    if out_dir is not None:
        write_table(rows, Path(out_dir) / "ablation.csv")
    return rows


def write_table(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def format_table(rows: list[dict], metrics: tuple[str, ...] = ("all_SR", "all_PR", "energy_mJ")) -> str:
    head = ["axis", "setting", *metrics]
    body = [[str(r["axis"]), str(r["setting"]),
             *(f"{r[m]:.2f}" if isinstance(r.get(m), float) else str(r.get(m, "")) for m in metrics)]
            for r in rows]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)) for line in [head, *body])
