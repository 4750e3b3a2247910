import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pgprec.dataset import align_domains, generate_synthetic_pair, split_holdout  # noqa: E402
from pgprec.graph import build_graph  # noqa: E402
from pgprec.prompts import index_relations  # noqa: E402


class Domains:
    """A small aligned synthetic pair with a target split."""

    def __init__(self, n_users, n_items, density, seed=0):
        src, tgt, rel = generate_synthetic_pair(n_users=n_users, n_source_items=n_items,
                                                n_target_items=n_items, density=density, seed=seed)
        self.pair = align_domains(src, tgt)
        self.source = build_graph(self.pair.source, self.pair.n_users, self.pair.n_source_items)
        self.split = split_holdout(self.pair.target, seed=seed)
        self.target = build_graph(self.split.train, self.pair.n_users, self.pair.n_target_items)
        self.related = index_relations(rel, self.pair.target_items)


@pytest.fixture(scope="session")
def tiny():
    return Domains(n_users=40, n_items=50, density=0.08, seed=1)


# criterion number -> (status, label), filled in by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, label = ACCEPTANCE[number]
        terminalreporter.write_line(f"{status} criterion {number}: {label}")
