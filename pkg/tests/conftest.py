import numpy as np
import pytest

from gnnvi import graphgen
from gnnvi.mdp import Mdp


def self_loop_mdp(r=0.0, gamma=0.9, p=1.0):
    return Mdp.from_lists(1, 1, gamma, [[[(0, p)]]], [[r]])


def two_state_mdp():
    # action 0: self-loop r=0; action 1: jump to the other state r=1
    trans = [[[(0, 1.0)], [(1, 1.0)]], [[(1, 1.0)], [(0, 1.0)]]]
    return Mdp.from_lists(2, 2, 0.5, trans, [[0.0, 1.0], [0.0, 1.0]])


def random_mdp(seed, n=20, a=5, p_edge=0.3, gamma=0.9):
    rng = np.random.default_rng(seed)
    return graphgen.graph_to_mdp(graphgen.gen_erdos_renyi(n, p_edge, rng), a, gamma, rng)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
