"""
Cold-start groups and paired comparisons
========================================

Users with fewer than five training interactions form the cold group. Two
rankers are compared per user with a paired t-test and a TOST equivalence
test, and the p-values are Holm-adjusted together.
"""

# %%
import numpy as np

from pgprec.dataset import label_cold_start
from pgprec.evaluation import evaluate
from pgprec.stats import adjust, paired_t_test, tost_equivalence

rng = np.random.default_rng(3)
n_users, n_items = 200, 120
train = [(u, int(i)) for u in range(n_users) for i in rng.choice(n_items, rng.integers(1, 12), replace=False)]
seen = {(u, i) for u, i in train}
test = [(u, int(i)) for u in range(n_users) for i in rng.choice(n_items, 3, replace=False) if (u, int(i)) not in seen]

# Ranker b is ranker a with a little extra signal on the test items.
a = rng.random((n_users, n_items))
b = a.copy()
for u, i in test:
    b[u, i] += 0.15

labels = label_cold_start(train, n_users)
reports = [evaluate(s, test, train, labels) for s in (a, b)]
for name, report in zip("ab", reports):
    print(f"[{name}]")
    print(report.summary(), end="")

# %%
results = adjust([
    paired_t_test(reports[1].recall, reports[0].recall, comparison="b_vs_a:recall10"),
    tost_equivalence(reports[1].recall, reports[0].recall, 0.05, comparison="b_vs_a:recall10"),
])
for r in results:
    print(r.test, round(r.statistic, 3), "p_adj", round(r.p_adj, 5), "reject" if r.decision else "keep")
