import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnnvi import mdp as mdp_mod
from gnnvi.mdp import Mdp, validate

from conftest import random_mdp, self_loop_mdp


def test_valid_self_loop():
    assert validate(self_loop_mdp()) == []


def test_probability_sum_violation():
    report = validate(self_loop_mdp(p=0.5))
    assert len(report) == 1
    v = report[0]
    assert v.kind == "sum" and (v.state, v.action) == (0, 0)
    assert "0.5" in v.message


def test_gamma_violation():
    report = validate(self_loop_mdp(gamma=1.0))
    assert [v.kind for v in report] == ["gamma"]


def test_duplicate_and_empty_rows_reported():
    m = Mdp.from_lists(2, 1, 0.9, [[[(1, 0.5), (1, 0.5)]], [[]]], [[0.0], [0.0]])
    kinds = {(v.kind, v.state) for v in validate(m)}
    assert ("duplicate", 0) in kinds
    assert ("empty", 1) in kinds


def test_successors_sorted():
    m = Mdp.from_lists(2, 1, 0.9, [[[(1, 0.3), (0, 0.7)]], [[(1, 1.0)]]], [[0.0], [0.0]])
    assert m.successors(0, 0) == [(0, 0.7), (1, 0.3)]
    assert self_loop_mdp().successors(0, 0) == [(0, 1.0)]


def test_successors_out_of_range():
    m = random_mdp(0, n=4, a=5)
    with pytest.raises(IndexError):
        m.successors(0, 5)
    with pytest.raises(IndexError):
        m.successors(4, 0)


def test_edge_set():
    assert self_loop_mdp().edge_set() == {(0, 0)}
    m = Mdp.from_lists(2, 1, 0.9, [[[(1, 0.3), (0, 0.7)]], [[(1, 1.0)]]], [[0.0], [0.0]])
    assert m.edge_set() == {(0, 0), (0, 1), (1, 1)}


def test_edge_set_line_graph():
    from gnnvi import graphgen

    rng = np.random.default_rng(3)
    m = graphgen.graph_to_mdp(graphgen.gen_line(3), 2, 0.9, rng)
    # enumerate candidates by hand: 0-1, 1-2 both ways plus self-loops
    allowed = {(0, 1), (1, 0), (1, 2), (2, 1), (0, 0), (1, 1), (2, 2)}
    es = m.edge_set()
    assert es <= allowed
    # with Dirichlet(1) draws no candidate falls under the pruning floor here
    assert es == allowed


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_round_trip(seed):
    m = random_mdp(seed, n=8, a=3)
    back = mdp_mod.loads(mdp_mod.dumps(m))
    assert validate(back) == []
    assert back.equals(m)
    assert mdp_mod.dumps(back) == mdp_mod.dumps(m)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_successors_partition(seed):
    m = random_mdp(seed, n=10, a=3)
    for s in range(m.num_states):
        for a in range(m.num_actions):
            assert abs(sum(p for _, p in m.successors(s, a)) - 1.0) <= 1e-9


def test_file_round_trip(tmp_path):
    m = random_mdp(1, n=5, a=2)
    path = tmp_path / "m.json"
    mdp_mod.save(m, path)
    assert mdp_mod.load(path).equals(m)
    assert path.read_bytes() == mdp_mod.dumps(m).encode()


def test_bad_version():
    d = self_loop_mdp().to_dict()
    d["version"] = 99
    with pytest.raises(ValueError, match="version"):
        Mdp.from_dict(d)


def test_immutable():
    m = self_loop_mdp()
    with pytest.raises(ValueError):
        m.probs[0] = 0.2


def test_permute_states_round_trip():
    m = random_mdp(2, n=6, a=2)
    perm = np.array([3, 1, 5, 0, 2, 4])
    inv = np.argsort(perm)
    assert m.permute_states(perm).permute_states(inv).equals(m)
