"""
How prompt nodes enter message passing
======================================

Attention over real neighbours plus prompt nodes splits exactly into two
separate attentions mixed by the softmax mass that lands on the prompts.
"""

# %%
import numpy as np

from pgprec.encoder import EncoderParams, encode, prefix_attention_check
from pgprec.graph import build_graph
from pgprec.prompts import build_prompt_set, count_tuned_params, full_model_report

rng = np.random.default_rng(0)
Q, K, V = rng.standard_normal((4, 8)), rng.standard_normal((6, 8)), rng.standard_normal((6, 8))
P_K, P_V = rng.standard_normal((3, 8)), rng.standard_normal((3, 8))
print("decomposition residual", prefix_attention_check(Q, K, V, P_K, P_V))

# %%
# A toy target graph: item 3 is related to item 0, so user 0 gets it as a hard prompt.
g = build_graph([(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)], 3, 4)
related = [frozenset({3}), frozenset(), frozenset({0}), frozenset({0})]
params = EncoderParams.initialise(3, 4, 4, 2, seed=1)
prompts = build_prompt_set(params, g, related, m_hard=2, m_soft=1, seed=2)
print("hard prompts per user", prompts.hard)

# %%
# Prompts change only the user side; item representations stay as without prompts.
plain_users, plain_items = encode(g, params).final()
users, items = encode(g, params, prompts).final()
print("user shift", np.abs(users - plain_users).max(axis=1))
print("item shift", np.abs(items - plain_items).max())

# %%
report = count_tuned_params(prompts, "prompts_only", 3, 4, 4, 2)
print(report.to_tsv())
print(full_model_report(3, 4, 4, 2).to_tsv())
