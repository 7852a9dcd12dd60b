import csv

import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tracker_inputs
from hybridtrack.energy import (E_AC_PJ, E_MAC_PJ, LayerOps, OpCountReport, concat_reports, count_ops,
                                energy_mj, estimate_energy, format_summary, measure_firing_rates,
                                summary_table, write_report_csv)
from hybridtrack.spiking import LIF
from hybridtrack.tracker import HybridTracker, TrackerConfig


class _Spiking(nn.Module):
    """LIF followed by a spike-driven dense layer; tokens last."""

    def __init__(self, m_in=6, m_out=5, bias=False):
        super().__init__()
        self.lif = LIF()
        self.fc = nn.Linear(m_in, m_out, bias=bias)
        self.fc.spike_input = True

    def forward(self, x):
        return self.fc(self.lif(x))


# -- energy arithmetic --------------------------------------------------------------------------

def test_constants():
    assert (E_MAC_PJ, E_AC_PJ) == (4.6, 0.9)


def test_dense_ann_row():
    e = energy_mj(56.4e9)
    assert e == pytest.approx(259.44, abs=1e-9)
    assert abs(e - 259.3) / 259.3 < 1e-3


def test_zero_ops_and_negative_counts():
    assert energy_mj(0, 0) == 0.0
    assert estimate_energy(OpCountReport()) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        energy_mj(-1.0)


def test_syops_energy_decomposition():
    assert energy_mj(0, 4.2e9) == pytest.approx(3.78, abs=1e-9)
    mac = 3.7e9 / 2
    assert energy_mj(mac) == pytest.approx(8.51, abs=1e-9)
    assert energy_mj(mac, 4.2e9) == pytest.approx(12.29, abs=1e-9)


def test_report_energy_partition():
    rep = OpCountReport([LayerOps("a", "Linear", "ann", op_mac=1e9),
                         LayerOps("s", "Conv1d", "snn", op_ac=2e9, firing_rate=0.25, is_synaptic=True)])
    e_ann, e_snn, e = estimate_energy(rep)
    assert e_ann == pytest.approx(4.6)
    assert e_snn == pytest.approx(0.45)
    assert e == pytest.approx(e_ann + e_snn)
    assert rep.syops_total == pytest.approx(0.5e9)
    assert rep.flops_total == 2e9


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1e9), st.floats(0, 1e9), st.floats(0, 1), st.booleans()),
                min_size=0, max_size=6),
       st.lists(st.tuples(st.floats(0, 1e9), st.floats(0, 1e9), st.floats(0, 1), st.booleans()),
                min_size=0, max_size=6))
def test_energy_is_additive_over_concatenation(r1, r2):
    def rep(rows):
        return OpCountReport([LayerOps(f"l{i}", "Linear", "snn" if s else "ann", op_mac=m, op_ac=a, firing_rate=f)
                              for i, (m, a, f, s) in enumerate(rows)])
    a, b = rep(r1), rep(r2)
    e = estimate_energy(concat_reports([a, b]))
    ea, eb = estimate_energy(a), estimate_energy(b)
    for x, y, z in zip(e, ea, eb):
        assert x == pytest.approx(y + z, rel=1e-12, abs=1e-15)


# -- counting ---------------------------------------------------------------------------------

def test_dense_layer_real_input_counts_mac():
    fc = nn.Linear(6, 5)
    rep = count_ops(fc, torch.randn(7, 6))
    assert rep.mac_total == 6 * 5 * 7
    assert rep.ac_total == 0


def test_dense_layer_spike_input_counts_ac():
    fc = nn.Linear(6, 5)
    fc.spike_input = True
    rep = count_ops(fc, (torch.rand(7, 6) < 0.5).float())
    assert rep.ac_total == 6 * 5 * 7
    assert rep.mac_total == 0
    assert rep.records[0].is_synaptic


def test_empty_model_zero_report():
    rep = count_ops(nn.Sequential(), torch.randn(3))
    assert rep.records == []
    assert rep.mac_total == rep.ac_total == rep.syops_total == 0


def test_conv_counts():
    conv = nn.Conv1d(4, 3, 1, bias=False)
    rep = count_ops(conv, torch.randn(2, 4, 10))
    assert rep.mac_total == 2 * 3 * 10 * 4


def test_firing_rates_zero_and_one():
    m = _Spiking()
    rates = measure_firing_rates(m, torch.zeros(3, 2, 4, 6))
    assert rates == {"fc": 0.0}
    rates = measure_firing_rates(m, torch.full((3, 2, 4, 6), 10.0))
    assert rates == {"fc": 1.0}
    with pytest.raises(ValueError):
        measure_firing_rates(m, torch.zeros(0, 2, 4, 6))


def test_firing_rates_in_unit_interval_and_syops(tiny_cfg):
    m = HybridTracker(tiny_cfg).eval()
    rep = count_ops(m, tracker_inputs(tiny_cfg, 1))
    syn = [r for r in rep.records if r.is_synaptic]
    assert syn
    for r in rep.records:
        assert 0.0 <= r.firing_rate <= 1.0
        assert r.op_mac >= 0 and r.op_ac >= 0
        assert r.flops == 2 * r.op_mac
    assert rep.syops_total == pytest.approx(sum(r.op_ac * r.firing_rate for r in rep.records))
    assert not rep.uncounted
    assert all(r.branch == "snn" for r in rep.records if r.layer.startswith(("tokenizer", "snn_blocks")))
    assert all(r.branch == "ann" for r in rep.records if r.layer.startswith(("adapters", "tda", "head")))


def test_lif_counts_one_mac_per_element():
    m = _Spiking()
    rep = count_ops(m, torch.randn(3, 2, 4, 6))
    lif = next(r for r in rep.records if r.layer == "lif")
    assert lif.op_mac == 3 * 2 * 4 * 6


def test_uncounted_layer_is_reported(caplog):
    class Odd(nn.Module):
        def __init__(self):
            super().__init__()
            self.w = nn.Parameter(torch.ones(3))

        def forward(self, x):
            return x * self.w

    rep = count_ops(nn.Sequential(nn.Linear(3, 3), Odd()), torch.randn(2, 3))
    assert rep.uncounted == ["1"]
    assert "uncounted" in caplog.text


def test_ac_scales_with_time_steps_adapter_mac_does_not(tiny_cfg):
    reps = {}
    for t in (1, 2, 4):
        cfg = TrackerConfig(**{**tiny_cfg.to_dict(), "time_steps": t, "direction": "i2e"})
        torch.manual_seed(0)
        m = HybridTracker(cfg).eval()
        reps[t] = count_ops(m, tracker_inputs(cfg, 1))
    ac = {t: r.ac_total for t, r in reps.items()}
    assert ac[2] == pytest.approx(2 * ac[1]) and ac[4] == pytest.approx(4 * ac[1])
    ad = {t: sum(x.op_mac for x in r.records if x.kind == "IstaAdapter") for t, r in reps.items()}
    assert ad[1] == ad[2] == ad[4] > 0


def test_with_rates_overrides():
    rep = OpCountReport([LayerOps("s", "Conv1d", "snn", op_ac=100.0, firing_rate=0.1, is_synaptic=True)])
    assert rep.with_rates({"s": 0.5}).syops_total == 50.0
    assert rep.syops_total == pytest.approx(10.0)


def test_summary_and_csv(tiny_cfg, tmp_path):
    m = HybridTracker(tiny_cfg).eval()
    rep = count_ops(m, tracker_inputs(tiny_cfg, 1))
    rows = summary_table(rep, m)
    assert [r["component"] for r in rows] == ["ann", "snn", "adapters", "tda", "total"]
    assert rows[-1]["Params"] == sum(p.numel() for p in m.parameters())
    assert rows[-1]["E_mJ"] == pytest.approx(estimate_energy(rep)[2])
    assert sum(r["MAC"] for r in rows[:-1]) == pytest.approx(rows[-1]["MAC"])
    assert "E_mJ" in format_summary(rows)
    write_report_csv(tmp_path / "e.csv", rep)
    with open(tmp_path / "e.csv") as f:
        body = list(csv.DictReader(f))
    assert body[-1]["layer"] == "TOTAL"
    assert float(body[-1]["energy_mJ"]) == pytest.approx(estimate_energy(rep)[2])
    assert len(body) == len(rep.records) + 1
