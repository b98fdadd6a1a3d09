import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.fft import dct
from scipy.stats import kendalltau as scipy_kendalltau

from dysdiff.metrics import (
    MCD_CONSTANT,
    MetricError,
    WerBreakdown,
    aggregate_wer,
    dtw_align,
    kendall_tau,
    mcd,
    mcd_from_cepstra,
    mel_to_cepstra,
    normalize_text,
    read_report_csv,
    report_from_rows,
    report_to_csv,
    round_half_up,
    wer,
)

from oracles import brute_force_dtw, kendall_pairs, monotone_paths


def test_dtw_identical_is_diagonal():
    a = np.random.default_rng(0).normal(size=(6, 3))
    res = dtw_align(a, a)
    assert res.total_cost == 0.0
    assert res.path == tuple((i, i) for i in range(6))


def test_dtw_small_example():
    a, b = np.array([0.0, 2.0]), np.array([0.0, 1.0, 2.0])
    res = dtw_align(a, b, lambda x, y: abs(x - y))
    assert res.total_cost == pytest.approx(1.0)
    cost = np.abs(a[:, None] - b[None, :])
    assert brute_force_dtw(cost)[0] == pytest.approx(1.0)


def test_dtw_forced_path():
    res = dtw_align(np.array([1.0]), np.array([3.0, 3.0, 3.0, 3.0]))
    assert len(res.path) == 4
    assert res.total_cost == pytest.approx(4 * 2.0)


def test_dtw_empty():
    with pytest.raises(MetricError):
        dtw_align([], [1.0])


def test_dtw_tie_break_prefers_diagonal():
    res = dtw_align(np.zeros(3), np.zeros(3))
    assert res.path == ((0, 0), (1, 1), (2, 2))


def test_dtw_path_count_oracle_sanity():
    # Delannoy numbers D(2,2)=13, D(1,3)=7
    assert len(monotone_paths(3, 3)) == 13
    assert len(monotone_paths(2, 4)) == 7


def test_dtw_matches_brute_force_and_symmetry():
    rng = np.random.default_rng(2024)
    for trial in range(1000):
        n, m = rng.integers(1, 9, size=2)
        dim = int(rng.integers(1, 4))
        a, b = rng.normal(size=(n, dim)), rng.normal(size=(m, dim))
        res = dtw_align(a, b)
        cost = np.linalg.norm(a[:, None] - b[None, :], axis=-1)
        assert res.total_cost == pytest.approx(brute_force_dtw(cost)[0], abs=1e-9)
        assert res.path[0] == (0, 0) and res.path[-1] == (n - 1, m - 1)
        steps = {(i2 - i1, j2 - j1) for (i1, j1), (i2, j2) in zip(res.path, res.path[1:])}
        assert steps <= {(1, 1), (1, 0), (0, 1)}
        assert sum(cost[i, j] for i, j in res.path) == pytest.approx(res.total_cost)
        if trial % 10 == 0:
            assert dtw_align(b, a).total_cost == pytest.approx(res.total_cost, abs=1e-9)


def test_cepstra_of_constant_column():
    cep = mel_to_cepstra(np.full((80, 4), -3.0), 13)
    assert cep.shape == (4, 13)
    np.testing.assert_allclose(cep, 0.0, atol=1e-12)


@pytest.mark.parametrize("k", [1, 5, 13])
def test_cepstra_cosine_basis(k):
    n = np.arange(80)
    col = np.cos(np.pi * k * (2 * n + 1) / (2 * 80))
    cep = mel_to_cepstra(col[:, None], 13)[0]
    expected = np.zeros(13)
    # orthonormal DCT-II of the k-th basis cosine: sqrt(N/2) at index k
    expected[k - 1] = math.sqrt(80 / 2)
    np.testing.assert_allclose(cep, expected, atol=1e-10)


def test_cepstra_linear_and_order_checks():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(80, 5)), rng.normal(size=(80, 5))
    np.testing.assert_allclose(mel_to_cepstra(x + y), mel_to_cepstra(x) + mel_to_cepstra(y), atol=1e-12)
    np.testing.assert_allclose(mel_to_cepstra(x, 13), dct(x, type=2, axis=0, norm="ortho")[1:14].T)
    for bad in (0, 80):
        with pytest.raises(MetricError):
            mel_to_cepstra(x, bad)


def test_mcd_identity_and_nonnegativity():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(80, 12))
    assert mcd(x, x) == 0.0
    assert mcd(x, x + 4.2) == pytest.approx(0.0, abs=1e-12)  # constant shift lives in c0
    assert mcd(x, rng.normal(size=(80, 9))) > 0


def test_mcd_single_frame_formula():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(80, 1)), rng.normal(size=(80, 1))
    diff = mel_to_cepstra(a)[0] - mel_to_cepstra(b)[0]
    assert mcd(a, b) == pytest.approx(10 * math.sqrt(2) / math.log(10) * np.sqrt(np.sum(diff**2)))
    assert MCD_CONSTANT == pytest.approx(6.141851463713754)


def test_mcd_robust_to_duplicated_frames():
    rng = np.random.default_rng(5)
    ref = rng.normal(0, 3.0, size=(6, 13))
    offset = rng.normal(0, 0.05, size=13)
    syn = ref + offset
    dup = np.repeat(syn, [1, 3, 1, 2, 1, 1], axis=0)
    base = mcd_from_cepstra(ref, syn)
    assert base == pytest.approx(MCD_CONSTANT * np.linalg.norm(offset))
    assert mcd_from_cepstra(ref, dup) == pytest.approx(base, rel=1e-12)
    cost = np.linalg.norm(ref[:, None] - dup[None, :], axis=-1)
    assert MCD_CONSTANT * brute_force_dtw(cost)[1] == pytest.approx(base, rel=1e-12)


def test_mcd_band_mismatch():
    with pytest.raises(MetricError):
        mcd(np.zeros((80, 2)), np.zeros((40, 2)))


@pytest.mark.parametrize("raw, tokens", [
    ("Hello, World!", ["hello", "world"]),
    ("it's  FINE", ["it's", "fine"]),
    ("'quoted'", ["quoted"]),
    ("  ", []),
    ("Route 66 west", ["route", "66", "west"]),
    ("rock'n'roll isn' t", ["rock'n'roll", "isn", "t"]),
    ("one\n\ttwo", ["one", "two"]),
])
def test_normalize_text(raw, tokens):
    assert normalize_text(raw) == tokens


def test_wer_examples():
    assert wer(list("abc"), list("abc")).wer == 0.0
    b = wer(["a", "b", "c"], ["a", "x", "c"])
    assert (b.substitutions, b.deletions, b.insertions) == (1, 0, 0)
    assert b.wer == pytest.approx(1 / 3)
    b = wer(["a"], ["x", "y", "z"])
    assert (b.substitutions, b.insertions, b.deletions) == (1, 2, 0)
    assert b.wer == 3.0
    b = wer(list("abcd"), list("ad"))
    assert (b.substitutions, b.deletions, b.insertions) == (0, 2, 0)
    with pytest.raises(MetricError):
        wer([], ["a"])


@given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=8), st.lists(st.sampled_from("abcd"), max_size=8))
def test_wer_bound(ref, hyp):
    b = wer(ref, hyp)
    assert b.wer <= max(len(ref), len(hyp)) / len(ref)
    assert b.substitutions + b.deletions == len(ref) - (len(ref) - b.substitutions - b.deletions)
    assert len(ref) - b.deletions + b.insertions == len(hyp)


def test_breakdown_invariants():
    with pytest.raises(MetricError):
        WerBreakdown(0, 0, 0, 0)
    with pytest.raises(MetricError):
        WerBreakdown(-1, 0, 0, 3)
    assert WerBreakdown(1, 2, 3, 4).wer == 1.5


def _speakers_with(rates_by_group):
    per, sev = {}, {}
    for group, (rate, n) in rates_by_group.items():
        for k in range(n):
            spk = f"{group}{k}"
            per[spk] = WerBreakdown(round(rate * 10_000), 0, 0, 10_000)
            sev[spk] = group
    return per, sev


def test_aggregate_single_speaker():
    rep = aggregate_wer({"F01": WerBreakdown(1, 1, 0, 8)}, {"F01": "severe"})
    assert rep.avg == rep.ovl == 0.25
    assert rep.severity_groups == {"severe": 0.25}


def test_aggregate_pooled_vs_average():
    per = {"A": WerBreakdown(1, 0, 0, 10), "B": WerBreakdown(3, 0, 0, 2)}
    rep = aggregate_wer(per, {"A": "mild", "B": "severe"})
    assert rep.avg == pytest.approx((0.1 + 1.5) / 2)
    assert rep.ovl == pytest.approx(4 / 12)
    assert list(rep.severity_groups) == ["severe", "mild"]
    with pytest.raises(MetricError):
        aggregate_wer(per, {"A": "mild"})
    with pytest.raises(MetricError):
        aggregate_wer({}, {})


def test_aggregate_identities_random_corpora():
    rng = np.random.default_rng(7)
    groups = ["severe", "moderate-severe", "moderate", "mild"]
    for _ in range(200):
        n = int(rng.integers(1, 12))
        per = {f"s{i}": WerBreakdown(*rng.integers(0, 20, 3), int(rng.integers(1, 40))) for i in range(n)}
        sev = {s: groups[int(rng.integers(0, 4))] for s in per}
        rep = aggregate_wer(per, sev)
        assert rep.avg == pytest.approx(np.mean([b.wer for b in per.values()]))
        assert rep.ovl == pytest.approx(sum(b.errors for b in per.values()) / sum(b.reference_words for b in per.values()))
        for g, v in rep.severity_groups.items():
            assert v == pytest.approx(np.mean([per[s].wer for s in per if sev[s] == g]))


def test_kendall_fixtures():
    assert kendall_tau([1, 2, 3], [3, 2, 1]) == -1.0
    assert kendall_tau([1, 2, 3], [1, 2, 3]) == 1.0
    c, d, _, _ = kendall_pairs([1, 2, 3, 4], [1, 3, 2, 4])
    assert (c, d) == (5, 1)
    assert kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(2 / 3)


def test_kendall_group_fixture():
    ref = [3.28, 2.45, 1.70, 0.275]
    syn = [2.63, 2.55, 1.35, 1.05]
    mcd_groups = [5.72, 7.09, 5.88, 6.44]
    assert kendall_pairs(syn, mcd_groups)[:2] == (2, 4)
    assert kendall_tau(syn, mcd_groups) == pytest.approx(-1 / 3)
    assert kendall_tau(ref, mcd_groups) == pytest.approx(-1 / 3)


def test_kendall_errors():
    with pytest.raises(MetricError):
        kendall_tau([1, 1, 1], [1, 2, 3])
    with pytest.raises(MetricError):
        kendall_tau([1], [1])
    with pytest.raises(MetricError):
        kendall_tau([1, 2], [1, 2, 3])


@given(st.lists(st.integers(-5, 5), min_size=2, max_size=12), st.randoms(use_true_random=False))
def test_kendall_properties(xs, rnd):
    ys = [rnd.randint(-5, 5) for _ in xs]
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return
    tau = kendall_tau(xs, ys)
    assert -1.0 <= tau <= 1.0
    assert tau == pytest.approx(scipy_kendalltau(xs, ys).statistic)
    assert kendall_tau(xs, xs) == pytest.approx(1.0)
    assert kendall_tau(xs, [-x for x in xs]) == pytest.approx(-1.0)
    perm = list(range(len(xs)))
    rnd.shuffle(perm)
    assert kendall_tau([xs[i] for i in perm], [ys[i] for i in perm]) == pytest.approx(tau)


@pytest.mark.parametrize("value, text", [(20.70125, "20.70"), (57.7725, "57.77"), (0.125, "0.13"),
                                         (168.83, "168.83"), (2.675, "2.68")])
def test_round_half_up(value, text):
    assert round_half_up(value) == text


def test_report_csv_round_trip():
    per = {"F01": WerBreakdown(3, 1, 2, 10), "M05": WerBreakdown(16, 1, 0, 10), "F04": WerBreakdown(0, 0, 1, 20)}
    sev = {"F01": "severe", "M05": "moderate-severe", "F04": "mild"}
    rep = aggregate_wer(per, sev)
    text = report_to_csv(rep)
    lines = text.splitlines()
    assert lines[0] == "speaker,severity,S,D,I,ref_words,wer_pct"
    assert "M05,moderate-severe,16,1,0,10,170.00" in lines
    assert "AVG,,,,,,78.33" in lines
    assert "OVL,,19,2,3,40,60.00" in lines
    assert "GROUP,mild,,,,,5.00" in lines
    rows = read_report_csv(text)
    assert report_from_rows(rows) == rep
    with pytest.raises(MetricError):
        read_report_csv("a,b\n")


def test_edit_counts_match_graph_oracle_small():
    from oracles import edit_distance_table

    strings, dist = edit_distance_table("ab", 4)
    for i, r in enumerate(strings):
        if not r:
            continue
        for j, h in enumerate(strings):
            assert wer(list(r), list(h)).errors == dist[i, j]
