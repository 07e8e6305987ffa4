import numpy as np
import pytest
from scipy.stats import chi2_contingency, chisquare

from stochact.core import make_rng
from stochact.errors import ConfigurationError
from stochact.model import Act, Dense, ModelSpec, Softmax, list_activation_slots, mini_convnet
from stochact.stochastic import ActivationSet, activation_set, gen_stochastic_model

HAT_AND_SOFT_FAMILY = {"melu_k4", "melu_k8", "galu_k4", "galu_k2", "softlearnable_fixed_beta",
               "softlearnable_learnable_beta"}


def test_set_sizes_and_membership():
    old, full, base = (activation_set(n, 255) for n in ("OldAS", "FullAS", "BaseAS"))
    assert (len(old), len(full), len(base)) == (9, 16, 11)
    assert set(old.members) < set(full.members) and set(base.members) < set(full.members)
    assert not {a.kind for a in base.members} & HAT_AND_SOFT_FAMILY
    assert all(a.max_input == 255.0 for a in full.members)
    assert len(set(full.members)) == 16
    assert activation_set("fullas").name == "FullAS"
    with pytest.raises(ConfigurationError):
        activation_set("NoSuchAS")


def test_singleton_and_determinism():
    base = mini_convnet((1, 8, 8), 3)
    relu_only = ActivationSet("relu", (Act("relu"),))
    assert gen_stochastic_model(base, relu_only, make_rng(0)) == base
    full = activation_set("FullAS")
    assert gen_stochastic_model(base, full, make_rng(4)) == gen_stochastic_model(base, full, make_rng(4))
    with pytest.raises(ConfigurationError):
        gen_stochastic_model(base, ActivationSet("empty", ()), make_rng(0))
    with pytest.raises(ConfigurationError):
        gen_stochastic_model(ModelSpec((2,), 2, (Dense(2), Softmax())), full, make_rng(0))


def test_only_slots_change():
    base = mini_convnet((1, 8, 8), 3)
    spec = gen_stochastic_model(base, activation_set("OldAS", 255), make_rng(1))
    slots = set(list_activation_slots(base))
    for i, (a, b) in enumerate(zip(base.layers, spec.layers)):
        if i not in slots:
            assert a == b


def _draws(base, aset, n, seed):
    rng = make_rng(seed)
    index = {a: i for i, a in enumerate(aset.members)}
    slots = list_activation_slots(base)
    return np.array([[index[gen_stochastic_model(base, aset, rng).layers[s]] for s in slots] for _ in range(n)])


def test_uniform_frequencies():
    base = ModelSpec((2,), 2, (Dense(3), Act(), Dense(2), Softmax()))
    full = activation_set("FullAS")
    draws = _draws(base, full, 100_000, 7)[:, 0]
    freq = np.bincount(draws, minlength=16) / len(draws)
    assert np.all(np.abs(freq - 1 / 16) <= 0.005)
    assert chisquare(np.bincount(draws, minlength=16)).pvalue > 0.01


def test_two_slots_independent():
    base = ModelSpec((2,), 2, (Dense(3), Act(), Dense(3), Act(), Dense(2), Softmax()))
    aset = activation_set("OldAS")
    draws = _draws(base, aset, 100_000, 8)
    table = np.zeros((9, 9))
    np.add.at(table, (draws[:, 0], draws[:, 1]), 1)
    assert chi2_contingency(table).pvalue > 0.01
