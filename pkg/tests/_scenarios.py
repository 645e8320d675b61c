"""Scenario generators shared by the test modules."""

import numpy as np
from scipy.stats import unitary_group

from keyforge import protocol
from keyforge.linalg import random_density


def random_basis_povm(dim, rng):
    U = unitary_group.rvs(dim, random_state=rng)
    return protocol.Povm(tuple(np.outer(U[:, k], U[:, k].conj()) for k in range(dim)))


def random_scenario(seed, d_a=2, d_b=2, bases=2):
    """Random projective bases on both sides, statistics of a random full-rank
    state, and a key read from Alice's outcome in the first basis."""
    rng = np.random.default_rng(seed)
    povms_a = [random_basis_povm(d_a, rng) for _ in range(bases)]
    povms_b = [random_basis_povm(d_b, rng) for _ in range(bases)]
    rho = random_density(d_a * d_b, rng=rng)
    cons = protocol.joint_probability_constraints(povms_a, povms_b, rho)
    key_map = {(0, a, 0): a for a in range(d_a)}
    sc = protocol.make_scenario(povms_a, povms_b, [(0, 0)], key_map, cons, key_size=d_a, check=False)
    return sc, rho


def pauli_povms():
    s = 1 / np.sqrt(2)
    vecs = [
        [np.array([1, 0]), np.array([0, 1])],
        [np.array([s, s]), np.array([s, -s])],
        [np.array([s, 1j * s]), np.array([s, -1j * s])],
    ]
    return [protocol.Povm(tuple(np.outer(v, v.conj()) for v in pair)) for pair in vecs]


def tomographic_scenario(rho):
    """Qubit pair pinned to ``rho`` by full two-qubit tomography; key from Alice's Z outcome."""
    p = pauli_povms()
    cons = protocol.joint_probability_constraints(p, p, rho)
    return protocol.make_scenario(p, p, [(0, 0)], {(0, 0, 0): 0, (0, 1, 0): 1}, cons, key_size=2, check=False)
