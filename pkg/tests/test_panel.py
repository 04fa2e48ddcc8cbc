"""Container, shares and CSV round-trip behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prodsys.panel import (
    PanelDataset,
    build_lag_pairs,
    compute_shares,
    load_csv,
    shares_from_logs,
    write_csv,
    write_prices_csv,
)


def tiny_panel(**kw):
    base = dict(
        firm_ids=["b", "a", "a", "b", "a"],
        years=[2001, 2002, 2001, 2002, 2004],
        y=[1.0, 2.0, 3.0, 4.0, 5.0],
        k=[0.1, 0.2, 0.3, 0.4, 0.5],
        l=[0.5, 0.6, 0.7, 0.8, 0.9],
        m=[1.1, 1.2, 1.3, 1.4, 1.5],
        s_l=[0.3, 0.4, 0.5, 0.6, 0.7],
        ln_r=[-0.1, -0.2, -0.3, -0.4, -0.5],
    )
    base.update(kw)
    return PanelDataset(**base)


# -- shares -------------------------------------------------------------------


def test_compute_shares_exact_values():
    s_l, ln_r = compute_shares(30.0, 70.0, 100.0)
    assert s_l == 0.3
    assert ln_r == 0.0


def test_compute_shares_rejects_nonpositive_levels():
    with pytest.raises(ValueError):
        compute_shares(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        compute_shares(1.0, 1.0, -2.0)


def test_shares_from_logs_matches_level_computation():
    wl, wm, rev = 12.5, 30.0, 55.0
    s_direct, r_direct = compute_shares(wl, wm, rev)
    s_log, r_log = shares_from_logs(np.log(rev), np.log(wl), np.log(wm))
    assert abs(s_log - s_direct) < 1e-14
    assert abs(r_log - r_direct) < 1e-14


def test_shares_from_logs_applies_price_ratios():
    # price ratios shift the cost logs, not the quantity logs
    s1, r1 = shares_from_logs(1.0, 0.2, 0.8, ln_price_l=0.1, ln_price_m=-0.3)
    s2, r2 = shares_from_logs(1.0, 0.2 + 0.1, 0.8 - 0.3)
    assert abs(s1 - s2) < 1e-15
    assert abs(r1 - r2) < 1e-15


# -- container ----------------------------------------------------------------


def test_dataset_sorts_by_firm_then_year():
    ds = tiny_panel()
    assert list(ds.labels) == ["a", "a", "a", "b", "b"]
    assert list(ds.year) == [2001, 2002, 2004, 2001, 2002]
    # y followed its rows through the sort
    assert list(ds.y) == [3.0, 2.0, 5.0, 1.0, 4.0]


def test_dataset_rejects_duplicate_keys():
    with pytest.raises(ValueError, match="duplicate"):
        tiny_panel(years=[2001, 2002, 2002, 2002, 2004], firm_ids=["a", "a", "a", "b", "a"])


def test_dataset_rejects_nonfinite_and_bad_shares():
    with pytest.raises(ValueError, match="non-finite"):
        tiny_panel(y=[1.0, np.nan, 3.0, 4.0, 5.0])
    with pytest.raises(ValueError, match="shares"):
        tiny_panel(s_l=[0.3, 1.0, 0.5, 0.6, 0.7])


def test_lag_pairs_skip_gap_years():
    ds = tiny_panel()
    pairs = ds.lag_pairs()
    # firm a has years 2001, 2002, 2004: one pair; firm b 2001, 2002: one pair
    assert len(pairs) == 2
    assert list(ds.year[pairs.cur]) == [2002, 2002]
    assert list(ds.year[pairs.prev]) == [2001, 2001]
    assert list(ds.labels[pairs.cur]) == ["a", "b"]


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(st.integers(0, 4), st.integers(2000, 2008)),
        min_size=1,
        max_size=30,
        unique=True,
    )
)
def test_lag_pairs_are_exactly_consecutive_firm_years(keys):
    n = len(keys)
    ds = PanelDataset(
        firm_ids=[f"f{f}" for f, _ in keys],
        years=[yr for _, yr in keys],
        y=np.zeros(n), k=np.zeros(n), l=np.zeros(n), m=np.zeros(n),
        s_l=np.full(n, 0.5), ln_r=np.zeros(n),
    )
    pairs = build_lag_pairs(ds)
    for c, p in zip(pairs.cur, pairs.prev):
        assert ds.firm[c] == ds.firm[p]
        assert ds.year[c] == ds.year[p] + 1
    # count matches a direct enumeration over the key set
    key_set = {(str(f"f{f}"), yr) for f, yr in keys}
    expected = sum(1 for f, yr in key_set if (f, yr - 1) in key_set)
    assert len(pairs) == expected


def test_controls_carry_names_and_shapes():
    ds = tiny_panel(x=np.arange(5.0), x_names=["age"], z=np.arange(10.0).reshape(5, 2))
    assert ds.x.shape == (5, 1)
    assert ds.x_names == ("age",)
    assert ds.z_names == ("z0", "z1")
    with pytest.raises(ValueError):
        tiny_panel(x=np.arange(5.0), x_names=["a", "b"])


# -- CSV I/O ------------------------------------------------------------------


def write_rows(path, rows, header="firm_id,year,output,capital,labor_cost,material_cost,revenue"):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def test_load_csv_basic_and_drop_accounting(tmp_path):
    path = tmp_path / "p.csv"
    write_rows(path, [
        ("a", 2001, 10.0, 5.0, 3.0, 7.0, 20.0),
        ("a", 2002, 11.0, 5.5, 3.1, 7.2, 21.0),
        ("b", 2001, -1.0, 5.0, 3.0, 7.0, 20.0),   # nonpositive output
        ("b", 2002, 9.0, 5.0, 0.0, 7.0, 20.0),    # nonpositive labor cost
    ])
    ds, report = load_csv(path)
    assert report.rows_read == 4
    assert report.rows_kept == 2
    assert report.rows_dropped == 2
    assert ds.n_obs == 2
    assert np.allclose(ds.y, np.log([10.0, 11.0]))
    s_exp, r_exp = compute_shares(3.0, 7.0, 20.0)
    assert abs(ds.s_l[0] - s_exp) < 1e-15
    assert abs(ds.ln_r[0] - r_exp) < 1e-15


def test_load_csv_missing_column_raises(tmp_path):
    path = tmp_path / "p.csv"
    write_rows(path, [("a", 2001, 1, 1, 1, 1, 1)], header="firm_id,year,output")
    with pytest.raises(ValueError, match="column"):
        load_csv(path)


def test_load_csv_duplicate_key_raises(tmp_path):
    path = tmp_path / "p.csv"
    write_rows(path, [
        ("a", 2001, 10.0, 5.0, 3.0, 7.0, 20.0),
        ("a", 2001, 11.0, 5.5, 3.1, 7.2, 21.0),
    ])
    with pytest.raises(ValueError, match="duplicate"):
        load_csv(path)


def test_write_then_load_round_trips_bytes(tmp_path, small_panel):
    ds, _, _ = small_panel
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(ds, p1)
    loaded, report = load_csv(p1)
    assert report.rows_dropped == 0
    write_csv(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_write_then_load_keeps_level_contract(tmp_path, small_panel):
    # l and m are logs of the expenditure columns; the price table rides
    # along separately rather than being divided out
    ds, _, _ = small_panel
    panel_path = tmp_path / "p.csv"
    price_path = tmp_path / "prices.csv"
    write_csv(ds, panel_path)
    write_prices_csv(ds, price_path)
    loaded, _ = load_csv(panel_path, prices=price_path)
    for name in ("y", "k", "s_l", "ln_r"):
        assert np.allclose(getattr(loaded, name), getattr(ds, name), atol=1e-12)
    assert np.allclose(loaded.l, ds.l + ds.ln_price_l, atol=1e-12)
    assert np.allclose(loaded.m, ds.m + ds.ln_price_m, atol=1e-12)
    assert np.allclose(loaded.ln_price_l, ds.ln_price_l, atol=1e-12)
    assert np.allclose(loaded.ln_price_m, ds.ln_price_m, atol=1e-12)


def test_price_table_load_and_write(tmp_path, small_panel):
    ds, _, _ = small_panel
    panel_path = tmp_path / "p.csv"
    price_path = tmp_path / "prices.csv"
    write_csv(ds, panel_path)
    years = np.unique(ds.year)
    table = {int(yr): (1.0 + 0.01 * i, 2.0 - 0.05 * i) for i, yr in enumerate(years)}
    with open(price_path, "w") as fh:
        fh.write("year,ratio_l,ratio_m\n")
        for yr, (rl, rm) in table.items():
            fh.write(f"{yr},{rl},{rm}\n")
    loaded, _ = load_csv(panel_path, prices=price_path)
    for i in range(loaded.n_obs):
        rl, rm = table[int(loaded.year[i])]
        assert abs(loaded.ln_price_l[i] - np.log(rl)) < 1e-12
        assert abs(loaded.ln_price_m[i] - np.log(rm)) < 1e-12
    # the writer reproduces the per-year ratios from the loaded panel
    out_path = tmp_path / "prices_out.csv"
    write_prices_csv(loaded, out_path)
    reloaded, _ = load_csv(panel_path, prices=out_path)
    assert np.allclose(reloaded.ln_price_l, loaded.ln_price_l, atol=1e-12)
    assert np.allclose(reloaded.ln_price_m, loaded.ln_price_m, atol=1e-12)


def test_load_csv_reads_control_columns(tmp_path):
    path = tmp_path / "p.csv"
    write_rows(path, [
        ("a", 2001, 10.0, 5.0, 3.0, 7.0, 20.0, 0.5, -1.0),
        ("a", 2002, 11.0, 5.5, 3.1, 7.2, 21.0, 0.6, -1.1),
    ], header="firm_id,year,output,capital,labor_cost,material_cost,revenue,rd,exported")
    ds, _ = load_csv(path, x_columns=("rd",), z_columns=("exported",))
    assert ds.x_names == ("rd",)
    assert ds.z_names == ("exported",)
    assert np.allclose(ds.x[:, 0], [0.5, 0.6])
    assert np.allclose(ds.z[:, 0], [-1.0, -1.1])
