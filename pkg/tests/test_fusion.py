import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from specdraft.datastore import build
from specdraft.fusion import (
    DATASTORE_SOURCE,
    FusionConfig,
    Source,
    calibrate,
    discount,
    merge,
)
from specdraft.harness import SimRecord
from specdraft.trees import ContinuationTree, tree_from_paths

paths_lists = st.lists(
    st.lists(st.integers(0, 3), min_size=1, max_size=4), min_size=0, max_size=8
)


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def test_config_defaults():
    cfg = FusionConfig()
    assert (cfg.P, cfg.dec_len, cfg.branch_len, cfg.input_branch_len) == (4, 30, 8, 8)
    assert (cfg.M, cfg.T) == (100, 16)
    assert (cfg.alpha, cfg.beta, cfg.gamma_ds, cfg.gamma_in) == (0.8, 0.8, 1.0, 0.95)


@pytest.mark.parametrize("dec_len,expect", [(30, 8), (9, 8), (5, 4), (2, 1), (1, 1)])
def test_branch_len_tracks_dec_len(dec_len, expect):
    assert FusionConfig(dec_len=dec_len).branch_len == expect


def test_branch_len_explicit_override():
    assert FusionConfig(dec_len=30, branch_len=3).branch_len == 3


@pytest.mark.parametrize(
    "kwargs",
    [
        {"P": 0},
        {"dec_len": 0},
        {"branch_len": 0},
        {"input_branch_len": 0},
        {"M": 0},
        {"T": 0},
        {"alpha": -0.1},
        {"alpha": 1.5},
        {"beta": 0.0},
        {"beta": 1.2},
        {"gamma_ds": 0.0},
        {"gamma_in": 1.0001},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        FusionConfig(**kwargs)


def test_alpha_zero_is_legal():
    assert FusionConfig(alpha=0.0).alpha == 0.0


def test_query_config_mapping():
    cfg = FusionConfig(P=3, M=17, T=5, branch_len=2)
    q = cfg.query_config(separator=9)
    assert (q.max_prefix_len, q.sample_cap, q.min_continuations, q.branch_len, q.separator) == (
        3,
        17,
        5,
        2,
        9,
    )


def test_config_file_round_trip(tmp_path):
    cfg = FusionConfig(P=3, dec_len=12, alpha=0.25, gamma_in=0.5)
    path = tmp_path / "cfg.txt"
    cfg.to_file(path)
    assert FusionConfig.from_file(path) == cfg


def test_config_from_partial_file_keeps_base(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("dec_len = 7\nalpha = 0.5\n")
    base = FusionConfig(P=2, T=3)
    cfg = FusionConfig.from_file(path, base=base)
    assert (cfg.P, cfg.T, cfg.dec_len, cfg.alpha) == (2, 3, 7, 0.5)


def test_config_rejects_unknown_key():
    with pytest.raises(ValueError, match="unknown config key"):
        FusionConfig.from_kv({"velocity": "3"})


# ---------------------------------------------------------------------------
# sources and discounts
# ---------------------------------------------------------------------------


def test_source_validation():
    with pytest.raises(ValueError, match="no prefix_len"):
        Source(Source.DATASTORE, prefix_len=2)
    with pytest.raises(ValueError, match="prefix_len"):
        Source(Source.INPUT)
    with pytest.raises(ValueError, match="unknown source kind"):
        Source("oracle")


def test_discount_datastore_decays_with_depth():
    cfg = FusionConfig(gamma_ds=0.5)
    assert discount(cfg, DATASTORE_SOURCE, 1) == 1.0
    assert discount(cfg, DATASTORE_SOURCE, 3) == 0.25


def test_discount_input_worked_value():
    cfg = FusionConfig(P=4, alpha=0.8, beta=0.9, gamma_in=0.95)
    got = discount(cfg, Source(Source.INPUT, 2), 3)
    assert got == pytest.approx(0.8 * 0.9**2 * 0.95**2)
    assert got == pytest.approx(0.58482)


def test_discount_full_length_match_skips_beta():
    cfg = FusionConfig(P=4, alpha=0.7, beta=0.1, gamma_in=1.0)
    assert discount(cfg, Source(Source.INPUT, 4), 1) == pytest.approx(0.7)


def test_discount_rejects_bad_depth_and_prefix():
    cfg = FusionConfig(P=2)
    with pytest.raises(ValueError, match="depth"):
        discount(cfg, DATASTORE_SOURCE, 0)
    with pytest.raises(ValueError, match="exceeds P"):
        discount(cfg, Source(Source.INPUT, 3), 1)


# ---------------------------------------------------------------------------
# merge
# ---------------------------------------------------------------------------


def _ds_tree():
    tree = ContinuationTree()
    tree.add_path([7, 5])
    tree.add_path([7])
    tree.add_path([8])
    return tree


def test_merge_walkthrough_budget_three():
    # candidates: 7 at 2/3, then a tie at 1/3 between node 8 (depth 1) and
    # 5-under-7 (depth 2); smaller depth wins, and the budget cuts there
    cfg = FusionConfig(dec_len=3, gamma_ds=1.0)
    tree = merge(_ds_tree(), [], cfg, root_token=0)
    assert tree.size == 3
    assert tree.to_shape() == (0, [(7, []), (8, [])])


def test_merge_walkthrough_budget_four():
    cfg = FusionConfig(dec_len=4, gamma_ds=1.0)
    tree = merge(_ds_tree(), [], cfg, root_token=0)
    assert tree.to_shape() == (0, [(7, [(5, [])]), (8, [])])
    assert tree.root.priority == math.inf
    assert tree.root.children[7].priority == pytest.approx(2 / 3)
    assert tree.root.children[8].priority == pytest.approx(1 / 3)
    assert tree.root.children[7].children[5].priority == pytest.approx(1 / 3)


def test_merge_budget_one_is_root_only():
    cfg = FusionConfig(dec_len=1)
    tree = merge(_ds_tree(), [], cfg, root_token=5)
    assert tree.size == 1
    assert tree.to_shape() == (5, [])


def test_merge_empty_sources_is_root_only():
    cfg = FusionConfig(dec_len=10)
    tree = merge(ContinuationTree(), [ContinuationTree()], cfg, root_token=7)
    assert tree.to_shape() == (7, [])


def test_merge_datastore_outranks_input_on_equal_priority():
    cfg = FusionConfig(P=1, dec_len=3, alpha=1.0, beta=1.0, gamma_ds=1.0, gamma_in=1.0)
    ds = tree_from_paths([[1]])
    inp = tree_from_paths([[2]])
    tree = merge(ds, [inp], cfg, root_token=0)
    assert tree.to_shape() == (0, [(1, []), (2, [])])
    assert tree.root.children[1].source == DATASTORE_SOURCE
    assert tree.root.children[2].source == Source(Source.INPUT, 1)


def test_merge_longer_input_prefix_outranks_shorter():
    cfg = FusionConfig(P=2, dec_len=3, alpha=1.0, beta=1.0, gamma_in=1.0)
    p1 = tree_from_paths([[4]])
    p2 = tree_from_paths([[3]])
    tree = merge(ContinuationTree(), [p1, p2], cfg, root_token=0)
    assert tree.to_shape() == (0, [(3, []), (4, [])])


def test_merge_equal_everything_falls_back_to_push_order():
    cfg = FusionConfig(dec_len=3, gamma_ds=1.0)
    ds = tree_from_paths([[5], [6]])  # both children count 1 of 2
    tree = merge(ds, [], cfg, root_token=0)
    assert tree.to_shape() == (0, [(5, []), (6, [])])


def test_merge_overlapping_sources_share_one_node():
    # both sources propose 7 under the root; the draft keeps one node and
    # both subtrees hang off it
    cfg = FusionConfig(P=1, dec_len=4, alpha=0.9, gamma_ds=1.0, gamma_in=1.0)
    ds = tree_from_paths([[7, 5]])
    inp = tree_from_paths([[7, 9]])
    tree = merge(ds, [inp], cfg, root_token=0)
    assert tree.size == 4
    assert tree.to_shape() == (0, [(7, [(5, []), (9, [])])])
    # the shared node keeps its first (datastore) provenance and priority
    assert tree.root.children[7].source == DATASTORE_SOURCE
    assert tree.root.children[7].priority == pytest.approx(1.0)


def test_merge_low_alpha_keeps_datastore_draft_intact():
    cfg = FusionConfig(P=1, dec_len=6, alpha=0.01, gamma_ds=1.0)
    ds = tree_from_paths([[1, 2, 3, 4, 5, 6]])  # single chain, ratios all 1.0
    inp = tree_from_paths([[9], [9], [8]])
    fused = merge(ds, [inp], cfg, root_token=0)
    alone = merge(ds, [], cfg, root_token=0)
    assert fused.to_shape() == alone.to_shape()


def test_merge_rejects_too_many_input_trees():
    cfg = FusionConfig(P=2)
    with pytest.raises(ValueError, match="input trees"):
        merge(ContinuationTree(), [ContinuationTree()] * 3, cfg, root_token=0)


def test_merge_child_priority_never_exceeds_parent(rng):
    for trial in range(200):
        cfg = FusionConfig(
            P=3,
            dec_len=int(rng.integers(2, 16)),
            alpha=float(rng.choice([0.5, 1.0])),
            beta=float(rng.choice([0.5, 1.0])),
            gamma_ds=float(rng.choice([0.5, 1.0])),
            gamma_in=float(rng.choice([0.5, 1.0])),
        )
        ds = oracles.random_cont_tree(rng, 4, 6, 3)
        inputs = [oracles.random_cont_tree(rng, 4, 3, 3) for _ in range(3)]
        tree = merge(ds, inputs, cfg, root_token=0)
        stack = list(tree.root.children.values())
        while stack:
            node = stack.pop()
            assert node.priority <= node.parent.priority + 1e-12
            stack.extend(node.children.values())


@given(paths_lists, paths_lists, paths_lists, st.integers(1, 12), st.booleans())
@settings(deadline=None, max_examples=200)
def test_merge_matches_reference(ds_paths, in1_paths, in2_paths, dec_len, tie_heavy):
    cfg = FusionConfig(
        P=2,
        dec_len=dec_len,
        alpha=0.5 if tie_heavy else 0.8,
        beta=0.5,
        gamma_ds=0.5 if tie_heavy else 1.0,
        gamma_in=0.5 if tie_heavy else 0.95,
    )
    ds = tree_from_paths(ds_paths)
    inputs = [tree_from_paths(in1_paths), tree_from_paths(in2_paths)]
    got = merge(ds, inputs, cfg, root_token=0).to_shape()
    want = oracles.reference_merge(ds, inputs, cfg, root_token=0)
    assert got == want


def test_merge_matches_reference_seeded_sweep(rng):
    for trial in range(300):
        cfg = FusionConfig(
            P=int(rng.integers(1, 5)),
            dec_len=int(rng.integers(1, 24)),
            alpha=float(rng.choice([0.0, 0.5, 1.0])),
            beta=float(rng.choice([0.5, 0.8, 1.0])),
            gamma_ds=float(rng.choice([0.5, 1.0])),
            gamma_in=float(rng.choice([0.5, 0.95, 1.0])),
        )
        tie = bool(rng.random() < 0.4)
        ds = oracles.random_cont_tree(rng, 5, 8, 4, tie_tokens=tie)
        n_inputs = int(rng.integers(0, cfg.P + 1))
        inputs = [
            oracles.random_cont_tree(rng, 5, 4, 4, tie_tokens=tie) for _ in range(n_inputs)
        ]
        got = merge(ds, inputs, cfg, root_token=3).to_shape()
        want = oracles.reference_merge(ds, inputs, cfg, root_token=3)
        assert got == want, f"trial {trial}"


def test_merge_size_never_exceeds_budget(rng):
    for _ in range(100):
        cfg = FusionConfig(dec_len=int(rng.integers(1, 10)))
        ds = oracles.random_cont_tree(rng, 3, 10, 4)
        tree = merge(ds, [], cfg, root_token=0)
        assert 1 <= tree.size <= cfg.dec_len

        def walk(node):
            return 1 + sum(walk(c) for c in node.children.values())

        assert walk(tree.root) == tree.size


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def _junk_corpus():
    # each token 1..8 is followed by junk 91 or 92, a 50/50 split, so the
    # datastore confidently drafts junk for any prompt-token prefix
    out = []
    for _ in range(4):
        for t in range(1, 9):
            out.extend([t, 91, t, 92])
    return out


def test_calibrate_prefers_input_source_on_repetitive_text():
    store = build(_junk_corpus())
    prompt = list(range(1, 9))
    record = SimRecord(prompt=prompt, reference=prompt * 3)
    base = FusionConfig(P=4, dec_len=10, T=1, input_branch_len=8)
    grid = [
        FusionConfig(**{**base.to_kv(), "alpha": 0.0}),
        FusionConfig(**{**base.to_kv(), "alpha": 0.8}),
    ]
    best = calibrate([record], store, grid)
    assert best.alpha == 0.8


def test_calibrate_tie_keeps_first_grid_entry(rng):
    # reference tokens are all distinct, so the input cache never fires and
    # alpha cannot matter; scores tie and the first grid entry wins
    corpus = rng.permutation(200).tolist()
    store = build(corpus)
    record = SimRecord(prompt=[500, 501], reference=corpus[20:50])
    base = FusionConfig(P=4, dec_len=8, T=1)
    grid = [
        FusionConfig(**{**base.to_kv(), "alpha": 0.3}),
        FusionConfig(**{**base.to_kv(), "alpha": 0.9}),
    ]
    assert calibrate([record], store, grid).alpha == 0.3


def test_calibrate_rejects_empty_inputs():
    store = build([1, 2, 3])
    record = SimRecord(prompt=[1], reference=[2])
    with pytest.raises(ValueError, match="empty dataset"):
        calibrate([], store, [FusionConfig()])
    with pytest.raises(ValueError, match="empty grid"):
        calibrate([record], store, [])
