"""Smoke tests for the dlens python bindings."""

import math

import numpy as np
import pytest

import dlens


def random_dist(rng, v):
    p = rng.uniform(1e-3, 1.0, size=v)
    return p / p.sum()


def test_divergence_identities():
    rng = np.random.default_rng(7)
    for _ in range(50):
        p = random_dist(rng, 32)
        q = random_dist(rng, 32)
        assert dlens.jsd(p, p) == 0.0
        assert abs(dlens.jsd(p, q) - dlens.jsd(q, p)) <= 1e-12
        assert 0.0 <= dlens.jsd(p, q) <= math.log(2.0) + 1e-12
        assert dlens.forward_kl(p, q) >= -1e-12
        # Jeffreys is the sum of the two KL directions
        assert abs(
            dlens.jeffreys(p, q) - (dlens.forward_kl(p, q) + dlens.reverse_kl(p, q))
        ) <= 1e-12


def test_perclass_decomposition():
    rng = np.random.default_rng(11)
    p = random_dist(rng, 100)
    q = random_dist(rng, 100)
    c = np.asarray(dlens.confidence(p, q))
    g = np.asarray([dlens.jsd_perclass_g(ci) for ci in c])
    assert abs(dlens.jsd(p, q) - 0.5 * float(np.dot(p, g))) <= 1e-9
    g_jd = np.asarray([dlens.jd_perclass_g(ci) for ci in c])
    assert abs(dlens.jeffreys(p, q) - float(np.dot(p, g_jd))) <= 1e-9


def test_landscape_limits():
    assert dlens.jsd_perclass_g(1.0) == 0.0
    assert dlens.jd_perclass_g(1.0) == 0.0
    assert abs(dlens.jsd_perclass_g(1e-8) - math.log(2.0)) <= 1e-6
    assert dlens.jd_perclass_g(1e-8) > dlens.jd_perclass_g(1e-4) > 0.0


def test_mixture_and_softmax():
    p = np.array([0.25, 0.75])
    q = np.array([0.75, 0.25])
    assert dlens.mixture(p, q) == pytest.approx([0.5, 0.5])
    s = dlens.softmax(np.array([math.log(2.0), 0.0]))
    assert s == pytest.approx([2.0 / 3.0, 1.0 / 3.0])


def test_logit_lens_uniform_on_zero_state():
    rng = np.random.default_rng(3)
    w_u = rng.normal(size=(13, 4))
    dist = np.asarray(dlens.logit_lens(np.zeros(4), w_u))
    assert dist == pytest.approx(np.full(13, 1.0 / 13.0))


def test_layer_mapping():
    assert dlens.select_student_layers(12, 5) == [2, 4, 6, 8, 10]
    assert dlens.select_student_layers(22, 5) == [4, 7, 11, 15, 18]
    pairs = dlens.uniform_map([2, 4, 6, 8, 10], 12, 48)
    assert pairs == [(2, 8), (4, 16), (6, 24), (8, 32), (10, 40)]


def test_rouge():
    assert dlens.lcs_length([1, 2, 3], [1, 2, 3]) == 3
    p, r, f = dlens.rouge_l([1, 2, 3], [1, 2, 3, 4])
    assert p == 1.0
    assert r == 0.75
    assert f == pytest.approx(6.0 / 7.0)
