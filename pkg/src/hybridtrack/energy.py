"""Operation counting and 45 nm energy estimates for hybrid ANN/SNN models.

Counting runs one hooked forward pass. Layers whose input is a spike train
(marked with ``spike_input = True``, plus the binary attention products)
contribute accumulate-only operations weighted by the measured firing rate;
every other piece of linear algebra, normalisation, activation and LIF
update counts as multiply-accumulate. Elementwise residual additions are not
counted.

Energy: ``E = E_MAC * sum(op_mac) + E_AC * sum(op_ac * fr)``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import torch
import torch.nn as nn

from .ista import TDA, CodeInit, IstaAdapter
from .spiking import LIF, SpikeAttention, SpikeBlock, SpikingEncoder, SpikingTokenizer
from .vit import Attention, PatchEmbed

log = logging.getLogger(__name__)

E_MAC_PJ = 4.6
E_AC_PJ = 0.9

_ELEMENTWISE = (nn.LayerNorm, nn.BatchNorm1d, nn.BatchNorm2d, nn.GELU, nn.ReLU, nn.Sigmoid,
                nn.Softmax, LIF)
_FREE = (nn.Sequential, nn.ModuleList, nn.ModuleDict, nn.Identity, nn.Dropout, nn.Flatten)
_SNN_SCOPES = (SpikingTokenizer, SpikeBlock, SpikingEncoder)


@dataclass
class LayerOps:
    layer: str
    kind: str
    branch: str = "ann"
    op_mac: float = 0.0
    op_ac: float = 0.0
    firing_rate: float = 0.0
    is_synaptic: bool = False
    params: int = 0
    calls: int = 0
    uncounted: bool = False

    @property
    def syops(self) -> float:
        return self.op_ac * self.firing_rate

    @property
    def flops(self) -> float:
        return 2.0 * self.op_mac

    @property
    def energy_mj(self) -> float:
        return (E_MAC_PJ * self.op_mac + E_AC_PJ * self.syops) * 1e-9

    def add(self, mac: float = 0.0, ac: float = 0.0, rate: float | None = None) -> None:
        if ac > 0:
            rate = 0.0 if rate is None else float(rate)
            total = self.op_ac + ac
            self.firing_rate = (self.syops + ac * rate) / total
            self.op_ac = total
        self.op_mac += mac
        self.calls += 1


@dataclass
class OpCountReport:
    records: list[LayerOps] = field(default_factory=list)

    def _sum(self, attr: str, branch: str | None = None) -> float:
        return float(sum(getattr(r, attr) for r in self.records if branch is None or r.branch == branch))

    @property
    def mac_total(self) -> float:
        return self._sum("op_mac")

    @property
    def ac_total(self) -> float:
        return self._sum("op_ac")

    @property
    def syops_total(self) -> float:
        return self._sum("syops")

    @property
    def flops_total(self) -> float:
        return 2.0 * self.mac_total

    @property
    def uncounted(self) -> list[str]:
        return [r.layer for r in self.records if r.uncounted]

    def branch_totals(self, branch: str) -> dict[str, float]:
        return {"mac": self._sum("op_mac", branch), "ac": self._sum("op_ac", branch),
                "syops": self._sum("syops", branch), "flops": 2.0 * self._sum("op_mac", branch),
                "params": self._sum("params", branch)}

    def __add__(self, other: "OpCountReport") -> "OpCountReport":
        return OpCountReport(self.records + other.records)

    def with_rates(self, rates: dict[str, float]) -> "OpCountReport":
        """Copy of the report with firing rates replaced for the named layers."""
        out = []
        for r in self.records:
            r2 = LayerOps(**{k: getattr(r, k) for k in r.__dataclass_fields__})
            if r.layer in rates:
                r2.firing_rate = float(rates[r.layer])
            out.append(r2)
        return OpCountReport(out)

    def rows(self) -> list[dict]:
        return [{"layer": r.layer, "kind": r.kind, "branch": r.branch, "op_mac": r.op_mac, "op_ac": r.op_ac,
                 "firing_rate": r.firing_rate, "syops": r.syops, "flops": r.flops,
                 "energy_mJ": r.energy_mj, "uncounted": int(r.uncounted)} for r in self.records]


def energy_mj(mac: float, syops: float = 0.0) -> float:
    """Energy in mJ of ``mac`` multiply-accumulates and ``syops`` spike-driven accumulates."""
    if mac < 0 or syops < 0:
        raise ValueError("operation counts must be nonnegative")
    return (E_MAC_PJ * mac + E_AC_PJ * syops) * 1e-9


def estimate_energy(report: OpCountReport) -> tuple[float, float, float]:
    """(E_ANN, E_SNN, E_total) in mJ."""
    e_ann = sum(r.energy_mj for r in report.records if r.branch != "snn")
    e_snn = sum(r.energy_mj for r in report.records if r.branch == "snn")
    return e_ann, e_snn, e_ann + e_snn


# ---------------------------------------------------------------------------
# hooked counting
# ---------------------------------------------------------------------------

def _lead(shape, keep: int) -> int:
    return math.prod(shape[:-keep]) if len(shape) > keep else 1


def _rate(t: torch.Tensor) -> float:
    return float(t.detach().float().mean()) if t.numel() else 0.0


def _branches(model: nn.Module) -> dict[str, str]:
    out = {}

    def walk(mod, prefix, snn):
        snn = snn or isinstance(mod, _SNN_SCOPES) or isinstance(mod, LIF)
        out[prefix] = "snn" if snn else "ann"
        for name, child in mod.named_children():
            walk(child, f"{prefix}.{name}" if prefix else name, snn)

    walk(model, "", False)
    return out


def _count_module(mod: nn.Module, inputs: tuple, output, rec: LayerOps) -> bool:
    """Add the cost of one call to ``rec``; False if the module kind is unknown."""
    spike_in = bool(getattr(mod, "spike_input", False))
    if isinstance(mod, (nn.Conv1d, nn.Conv2d)):
        ops = output.numel() * mod.weight[0].numel()
        if spike_in:
            rec.is_synaptic = True
            rec.add(ac=ops, rate=_rate(inputs[0]))
        else:
            rec.add(mac=ops)
    elif isinstance(mod, nn.Linear):
        ops = _lead(inputs[0].shape, 1) * mod.in_features * mod.out_features
        if spike_in:
            rec.is_synaptic = True
            rec.add(ac=ops, rate=_rate(inputs[0]))
        else:
            rec.add(mac=ops)
    elif isinstance(mod, _ELEMENTWISE):
        rec.add(mac=output.numel())
    elif isinstance(mod, SpikeAttention):
        q, k, v = inputs
        *lead, m, n = q.shape
        d = m // mod.heads
        per = math.prod(lead) * mod.heads * n * n * d
        rec.is_synaptic = True
        rec.add(ac=per, rate=0.5 * (_rate(q) + _rate(k)))
        rec.add(ac=per, rate=_rate(v))
    elif isinstance(mod, Attention):
        b, n, m = inputs[0].shape
        per = b * n * n * m
        # two products plus the softmax
        rec.add(mac=2 * per + b * mod.heads * n * n)
    elif isinstance(mod, IstaAdapter):
        x_src, a_prev = inputs[0], inputs[1]
        lat, m_in = mod.P.shape
        n = x_src.shape[-1]
        lead_in = math.prod(torch.broadcast_shapes(x_src.shape[:-2], a_prev.shape[:-2]))
        _, code = output
        lead_out = _lead(code.shape, 2)
        rec.add(mac=lead_in * n * (2 * m_in * lat + lat) + lead_out * n * lat * mod.D_out.shape[0])
    elif isinstance(mod, TDA):
        a = inputs[0]
        t = a.shape[0]
        b = a.shape[1] if a.dim() == 4 else 1
        per_step = a[0].numel()
        pool = 2 * a.numel() + 2 * b * t * t * mod.pool + b * t
        rec.add(mac=pool + t * per_step)
    elif isinstance(mod, CodeInit):
        x0 = inputs[0]
        rec.add(mac=_lead(x0.shape, 2) * x0.shape[-1] * mod.weight.numel())
    elif isinstance(mod, PatchEmbed):
        rec.add()  # projection counted on its conv; positional adds are free
    else:
        return False
    return True


def count_ops(model: nn.Module, sample: tuple | torch.Tensor,
              branch_of: Callable[[str], str] | None = None) -> OpCountReport:
    """Count MAC/AC operations for one forward pass of ``model(*sample)``.

    Every module that owns parameters or has no children must be a known kind;
    others get an ``uncounted`` record and a warning.
    """
    if not isinstance(sample, (tuple, list)):
        sample = (sample,)
    branches = _branches(model)
    names = {mod: name for name, mod in model.named_modules()}
    records: dict[str, LayerOps] = {}
    order: list[str] = []

    def hook(mod, inputs, output):
        name = names[mod] or type(mod).__name__
        rec = records.get(name)
        if rec is None:
            branch = branch_of(name) if branch_of else branches.get(names[mod], "ann")
            rec = LayerOps(name, type(mod).__name__, branch,
                           params=sum(p.numel() for p in mod.parameters(recurse=False)))
            records[name] = rec
            order.append(name)
        if not _count_module(mod, inputs, output, rec):
            rec.uncounted = True
            rec.calls += 1

    handles = []
    for mod in model.modules():
        if isinstance(mod, _FREE):
            continue
        owns = any(True for _ in mod.parameters(recurse=False))
        leaf = not any(True for _ in mod.children())
        known = isinstance(mod, (nn.Conv1d, nn.Conv2d, nn.Linear, SpikeAttention, Attention,
                                 IstaAdapter, TDA, CodeInit, PatchEmbed) + _ELEMENTWISE)
        if known or owns or leaf:
            handles.append(mod.register_forward_hook(hook))
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            model(*sample)
    finally:
        for h in handles:
            h.remove()
        model.train(was_training)

    report = OpCountReport([records[n] for n in order])
    for name in report.uncounted:
        log.warning("uncounted layer %s (%s)", name, records[name].kind)
    return report


def measure_firing_rates(model: nn.Module, batch: tuple | torch.Tensor) -> dict[str, float]:
    """Mean presynaptic spike rate for every synaptic layer over ``batch``."""
    if not isinstance(batch, (tuple, list)):
        batch = (batch,)
    if any(isinstance(t, torch.Tensor) and t.numel() == 0 for t in batch):
        raise ValueError("empty evaluation batch")
    report = count_ops(model, batch)
    return {r.layer: r.firing_rate for r in report.records if r.is_synaptic}


def count_params(model: nn.Module, predicate: Callable[[str], bool] | None = None) -> int:
    return sum(p.numel() for n, p in model.named_parameters() if predicate is None or predicate(n))


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def summary_table(report: OpCountReport, model: nn.Module | None = None) -> list[dict]:
    """One row per component group plus a total row, in the cost-table column layout."""
    groups = {"ann": lambda r: r.branch == "ann" and r.kind not in ("IstaAdapter", "TDA", "CodeInit"),
              "snn": lambda r: r.branch == "snn",
              "adapters": lambda r: r.kind in ("IstaAdapter", "CodeInit"),
              "tda": lambda r: r.kind == "TDA"}
    rows = []
    for gname, pred in list(groups.items()) + [("total", lambda r: True)]:
        recs = [r for r in report.records if pred(r)]
        mac_ann = sum(r.op_mac for r in recs if r.branch != "snn")
        mac_snn = sum(r.op_mac for r in recs if r.branch == "snn")
        sub = OpCountReport(recs)
        e_ann, e_snn, e = estimate_energy(sub)
        rows.append({"component": gname, "Params": sum(r.params for r in recs),
                     "MAC": mac_ann + mac_snn, "AC": sub.ac_total,
                     "FLOPs_ANN": 2 * mac_ann, "FLOPs_SNN": 2 * mac_snn, "SyOps": sub.syops_total,
                     "E_ANN_mJ": e_ann, "E_SNN_mJ": e_snn, "E_mJ": e})
    if model is not None:
        rows[-1]["Params"] = count_params(model)
    return rows


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, int) or float(v).is_integer() and abs(v) < 1e4:
        return f"{int(v)}"
    for unit, scale in (("G", 1e9), ("M", 1e6), ("K", 1e3)):
        if abs(v) >= scale:
            return f"{v / scale:.3g}{unit}"
    return f"{v:.4g}"


def format_summary(rows: list[dict]) -> str:
    cols = list(rows[0].keys())
    cells = [cols] + [[_fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells)


def write_report_csv(path, report: OpCountReport) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = report.rows()
    fields = ["layer", "kind", "branch", "op_mac", "op_ac", "firing_rate", "syops", "flops", "energy_mJ",
              "uncounted"]
    e_ann, e_snn, e = estimate_energy(report)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
        w.writerow({"layer": "TOTAL", "kind": "", "branch": "", "op_mac": report.mac_total,
                    "op_ac": report.ac_total,
                    "firing_rate": report.syops_total / report.ac_total if report.ac_total else 0.0,
                    "syops": report.syops_total, "flops": report.flops_total, "energy_mJ": e,
                    "uncounted": len(report.uncounted)})


def concat_reports(reports: Iterable[OpCountReport]) -> OpCountReport:
    out = OpCountReport()
    for r in reports:
        out = out + r
    return out
