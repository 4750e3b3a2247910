import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgprec.dataset import RelationTable, generate_synthetic_pair, align_domains
from pgprec.encoder import EncoderParams
from pgprec.errors import ConfigError
from pgprec.graph import build_graph
from pgprec.prompts import (
    build_prompt_set, candidate_pool, correlation_scores, count_tuned_params, empty_prompt_set,
    full_model_report, index_relations, init_soft_prompts, select_hard_prompts,
)


def test_candidate_pool_examples():
    related = [frozenset({2, 3}), frozenset(), frozenset(), frozenset()]
    assert candidate_pool({0}, related) == {2, 3}
    assert candidate_pool({0}, [frozenset()] * 4) == set()
    assert candidate_pool({0, 1}, [frozenset({0, 1}), frozenset()]) == set()


def test_index_relations_filters_unknown_items():
    rel = RelationTable()
    rel.add("a", "also_bought", "b")
    rel.add("a", "also_viewed", "zzz")
    rel.add("b", "bought_together", "a")
    assert index_relations(rel, ["a", "b", "c"]) == [frozenset({1}), frozenset({0}), frozenset()]


def test_correlation_examples():
    reps = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    assert correlation_scores(reps, [0], [1]).tolist() == [0.0]
    assert correlation_scores(reps, [0], [2]).tolist() == [1.0]
    reps = np.array([[0.2, 0.0], [0.7, 0.0], [1.0, 0.0]])
    assert correlation_scores(reps, [0, 1], [2]).tolist() == [0.7]
    assert correlation_scores(reps, [0, 1], [2], agg="sum").tolist() == pytest.approx([0.9])
    with pytest.raises(ValueError):
        correlation_scores(reps, [], [2])
    with pytest.raises(ConfigError):
        correlation_scores(reps, [0], [2], agg="mean")


def test_select_examples():
    assert select_hard_prompts({10: 0.9, 11: 0.1}, 1) == [10]
    assert select_hard_prompts({7: 0.5, 3: 0.5}, 1) == [3]
    assert select_hard_prompts({1: 0.2, 2: 0.3}, 5) == [2, 1]
    with pytest.raises(ConfigError):
        select_hard_prompts({}, -1)


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.integers(0, 50), st.sampled_from([0.0, 0.5, 1.0, -1.0]), max_size=12),
       st.integers(0, 6), st.randoms(use_true_random=False))
def test_select_is_order_independent(scores, m, rnd):
    items = list(scores.items())
    rnd.shuffle(items)
    assert select_hard_prompts(dict(items), m) == select_hard_prompts(scores, m)
    out = select_hard_prompts(scores, m)
    ranked = sorted(scores, key=lambda k: (-scores[k], k))
    assert out == ranked[:m]


def test_init_soft_prompts():
    assert init_soft_prompts(0, 8).shape == (0, 8)
    s = init_soft_prompts(3, 64, seed=1)
    assert s.shape == (3, 64)
    assert np.abs(s).max() <= np.sqrt(6 / 67)
    np.testing.assert_array_equal(s, init_soft_prompts(3, 64, seed=1))


@pytest.fixture(scope="module")
def target():
    src, tgt, rel = generate_synthetic_pair(n_users=40, n_source_items=30, n_target_items=60, density=0.08, seed=3)
    pair = align_domains(src, tgt)
    g = build_graph(pair.target, pair.n_users, pair.n_target_items)
    related = index_relations(rel, pair.target_items)
    params = EncoderParams.initialise(pair.n_users, pair.n_target_items, 8, 2, seed=0)
    return g, related, params


def test_build_prompt_set_structure(target):
    g, related, params = target
    ps = build_prompt_set(params, g, related, m_hard=5, m_soft=3, seed=0)
    user_items = g.user_item_sets()
    assert ps.soft_embeddings.shape == (3, 8) and ps.P_V_prime.shape == (8, 8)
    assert all(len(h) <= 5 for h in ps.hard)
    assert any(len(h) == 5 for h in ps.hard)
    for u, h in enumerate(ps.hard):
        assert not set(h) & user_items[u]
        assert set(h) <= candidate_pool(user_items[u], related)
    assert ps.hard_ids.tolist() == sorted({i for h in ps.hard for i in h})
    np.testing.assert_array_equal(ps.hard_embeddings, params.tensors["item_embeddings"][ps.hard_ids])
    assert not np.shares_memory(ps.hard_embeddings, params.tensors["item_embeddings"])


def test_build_prompt_set_empty_pool_user(target):
    g, related, params = target
    no_relations = [frozenset()] * g.n_items
    ps = build_prompt_set(params, g, no_relations, m_hard=5, m_soft=2, seed=0)
    assert all(h == [] for h in ps.hard)
    assert ps.n_distinct_hard == 0 and ps.m_soft == 2


def test_build_prompt_set_degenerate(target):
    g, related, params = target
    ps = build_prompt_set(params, g, related, m_hard=0, m_soft=0, seed=0)
    assert ps.n_distinct_hard == 0 and ps.m_soft == 0
    with pytest.raises(ConfigError):
        build_prompt_set(params, g, related, m_hard=-1, m_soft=0)


def test_count_examples():
    ps = empty_prompt_set(3, 4)
    ps = ps.with_tensors({"prompt.hard": np.zeros((10, 4)), "prompt.soft": np.zeros((3, 4)),
                          "prompt.P_V": np.eye(4)})
    ps.hard_ids = np.arange(10)
    assert count_tuned_params(ps, "prompts_only", 3, 20, 4, 2).tuned == 68
    assert count_tuned_params(empty_prompt_set(3, 4), "prompts_only", 3, 20, 4, 2).tuned == 16
    extended = count_tuned_params(ps, "prompts_plus_target_items", 3, 20, 4, 2)
    assert extended.tuned == 68 + 80
    assert extended.total == (3 + 20) * 4 + 4 * 2 * 16
    with pytest.raises(ConfigError):
        count_tuned_params(ps, "everything", 3, 20, 4, 2)


def test_paper_scale_embedding_count():
    report = full_model_report(12739, 12772, 64, 3)
    assert report.groups["user_embeddings"] + report.groups["item_embeddings"] == 1_632_704
    assert report.ratio == 1.0


def test_report_tsv():
    report = count_tuned_params(empty_prompt_set(2, 2), "prompts_only", 2, 2, 2, 1)
    lines = report.to_tsv().splitlines()
    assert lines[0] == "group\tcount"
    assert "P_V_prime\t4" in lines and lines[-1].startswith("ratio\t")
