import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vbprune import nn, sim, training
from vbprune.optim import SghmcState, sghmc_step
from vbprune.spike_slab import (MaskState, SpikeSlabConfig, alive_weights, apply_mask_semantics, decay_vector,
                                em_update_softmask, lambda1_threshold, precision_vector, prune_concentration,
                                prune_l2, sparsity_metrics)

from .helpers import tiny_example


def q_difference(w, delta0, delta1, p_spike):
    """Q(gamma=0) - Q(gamma=1) for one group, in 60-digit arithmetic.

    Q(gamma) = log N(w; 0, 1/delta_gamma I) + log pi(gamma) up to terms shared by both.
    """
    with mpmath.workdps(60):
        d0, d1, p = mpmath.mpf(delta0), mpmath.mpf(delta1), mpmath.mpf(p_spike)
        S = mpmath.fsum(mpmath.mpf(float(x)) ** 2 for x in w)
        G = len(w)

        def q(d, prior):
            return G / 2 * mpmath.log(d) - d * S / 2 + mpmath.log(prior)

        return q(d0, p) - q(d1, 1 - p)


TIE = mpmath.mpf("1e-45")  # far below any gap float inputs can produce, far above 60-digit rounding


def oracle_spike(w, delta0, delta1, p_spike):
    # ties go to the spike: the M-step inequality is inclusive
    return q_difference(w, delta0, delta1, p_spike) >= -TIE


def decide(w, delta0, delta1, p_spike):
    part = nn.kernel_partition([list(range(len(w)))])
    lam = lambda1_threshold(delta0, delta1, p_spike, len(w))
    return not em_update_softmask(np.asarray(w, dtype=float), part, lam)[0]


class TestLambda1:
    def test_worked_example(self):
        assert lambda1_threshold(100, 1, 0.5, 9) == pytest.approx(math.log(100) / 99, abs=1e-15)
        # the quoted 0.0465170 agrees to six significant digits
        assert lambda1_threshold(100, 1, 0.5, 9) == pytest.approx(0.0465170, abs=2e-7)

    @pytest.mark.parametrize("G", [1, 2, 7, 100])
    def test_even_prior_has_no_odds_term(self, G):
        assert lambda1_threshold(50, 2, 0.5, G) == math.log(25) / 48

    def test_large_group_limit(self):
        assert lambda1_threshold(10, 1, 0.01, 10**9) == pytest.approx(math.log(10) / 9, rel=1e-8)

    @pytest.mark.parametrize("args", [(1, 1, 0.5, 2), (1, 2, 0.5, 2), (2, 1, 0.0, 2), (2, 1, 0.5, 0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            lambda1_threshold(*args)


class TestSoftMask:
    def test_zero_group_is_spike(self):
        part = nn.kernel_partition([[0, 1]])
        assert not em_update_softmask(np.zeros(2), part, 1e-9)[0]

    def test_large_group_is_slab(self):
        part = nn.kernel_partition([[0, 1]])
        assert em_update_softmask(np.array([0.3, 0.4]), part, 0.1)[0]

    def test_boundary_is_spike(self):
        part = nn.kernel_partition([[0, 1]])
        assert not em_update_softmask(np.array([0.25, 0.25]), part, 0.0625)[0]

    def test_matches_l2_pruning(self):
        rng = np.random.default_rng(0)
        spec = nn.NetworkSpec((30, 4, 1), ("relu",))
        w = rng.normal(0, 0.2, spec.n_params)
        part = nn.group_partition(spec, "input-unit", [0])
        np.testing.assert_array_equal(em_update_softmask(w, part, 0.03), prune_l2(w, part, 0.03))


def test_m_step_matches_brute_force_on_1000_groups():
    rng = np.random.default_rng(20240611)
    mismatches = []
    for i in range(1000):
        G = int(rng.integers(1, 17))
        delta1 = float(np.exp(rng.uniform(-2, 4)))
        delta0 = delta1 * float(np.exp(rng.uniform(0.01, 8)))
        p = float(rng.uniform(0.01, 0.99))
        lam = lambda1_threshold(delta0, delta1, p, G)
        # scale weights so that groups land on both sides of the threshold
        scale = math.sqrt(abs(lam)) * float(np.exp(rng.uniform(-1.5, 1.5))) + 1e-3
        w = rng.normal(0, scale, G)
        if decide(w, delta0, delta1, p) != oracle_spike(w, delta0, delta1, p):
            mismatches.append(i)
    assert mismatches == []


# exact ties in the reals: zero weights and prior odds that cancel the precision ratio
TIES = [(3.0, 1.0, 0.25, 2), (9.0, 1.0, 0.25, 1), (30.0, 10.0, 0.25, 2), (7.0, 1.0, 0.125, 2),
        (49.0, 1.0, 0.125, 1), (700.0, 100.0, 0.125, 2), (15.0, 1.0, 0.0625, 2)]


@pytest.mark.parametrize("delta0,delta1,p,G", TIES)
def test_m_step_ties(delta0, delta1, p, G):
    w = np.zeros(G)
    assert abs(q_difference(w, delta0, delta1, p)) < TIE
    assert oracle_spike(w, delta0, delta1, p)
    assert decide(w, delta0, delta1, p) is True


@settings(max_examples=150, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=16), st.floats(0.05, 50), st.floats(1.01, 1e4),
       st.floats(0.01, 0.99))
def test_m_step_property(w, delta1, ratio, p):
    delta0 = delta1 * ratio
    assert decide(w, delta0, delta1, p) == oracle_spike(w, delta0, delta1, p)


class TestDecay:
    def test_values(self):
        spec = nn.NetworkSpec((2, 2, 1), ("relu",))
        part = nn.group_partition(spec, "input-unit", [0])
        d = decay_vector(np.array([False, True]), part, 2500, 25, 10000, spec.n_params)
        assert set(np.unique(d)) == {0.25, 0.0025}
        assert np.all(d[nn.bias_mask(spec)] == 0.0025)
        np.testing.assert_array_equal(d[part.groups[0].members], 0.25)

    def test_uniform_cases(self):
        spec = nn.NetworkSpec((3, 2, 1), ("relu",))
        part = nn.group_partition(spec, "input-unit", [0])
        slab = precision_vector(np.ones(3, bool), part, 9.0, 2.0, spec.n_params)
        spike = precision_vector(np.zeros(3, bool), part, 9.0, 2.0, spec.n_params)
        assert np.all(slab == 2.0)
        assert np.all(spike[part.broadcast(np.zeros(3))[0]] == 9.0)

    @settings(max_examples=30)
    @given(st.lists(st.booleans(), min_size=4, max_size=4))
    def test_dichotomy_per_group(self, soft):
        spec = nn.NetworkSpec((4, 3, 2, 1), ("relu", "relu"))
        part = nn.group_partition(spec, "input-unit")
        soft = np.array(soft + [True] * (len(part) - 4))
        d = decay_vector(soft, part, 100.0, 1.0, 10, spec.n_params)
        for g, s in zip(part.groups, soft):
            assert np.all(d[g.members] == (0.1 if s else 10.0))


class TestPruning:
    def test_concentrated_group_pruned(self):
        part = nn.kernel_partition([[0, 1, 2]])
        alive, _ = prune_concentration(np.array([0.010, -0.011, 0.009]), part, nn.kernel_partition([]), 0.005)
        assert not alive[0]

    def test_spread_group_kept(self):
        part = nn.kernel_partition([[0, 1]])
        alive, _ = prune_concentration(np.array([0.5, -0.3]), part, nn.kernel_partition([]), 0.005)
        assert alive[0]

    def test_zero_threshold_prunes_nothing(self):
        part = nn.kernel_partition([[0, 1], [2], [3]])
        alive, _ = prune_concentration(np.zeros(4), part, part, 0.0)
        assert alive.all()

    def test_singleton_fallback(self):
        part = nn.kernel_partition([[0], [1]])
        alive, _ = prune_concentration(np.array([0.001, -0.2]), part, nn.kernel_partition([]), 0.01)
        np.testing.assert_array_equal(alive, [False, True])

    def test_l2_examples(self):
        part = nn.kernel_partition([[0, 1], [2, 3]])
        np.testing.assert_array_equal(prune_l2(np.array([0.1, 0.1, 1.0, 1.0]), part, 0.02), [False, True])

    def test_weight_pruned_if_any_group_pruned(self):
        spec = nn.NetworkSpec((3, 2, 1), ("relu",))
        inp = nn.group_partition(spec, "input-unit", [0])
        out = nn.group_partition(spec, "output-unit", [0])
        alive = alive_weights(spec.n_params, [(inp, np.array([True, False, True])), (out, np.array([True, False]))])
        w0 = alive[:6].reshape(3, 2)
        np.testing.assert_array_equal(w0, [[True, False], [False, False], [True, False]])
        assert alive[6:].all()


class TestMaskSemantics:
    def test_dfp_zeroes_dense_and_velocity(self):
        w, v = np.array([1.0, 2.0, 3.0]), np.ones(3)
        alive = np.array([True, False, True])
        dense, fw = apply_mask_semantics("dfp", w, alive, v)
        np.testing.assert_array_equal(dense, [1.0, 0.0, 3.0])
        np.testing.assert_array_equal(fw, dense)
        assert v[1] == 0.0

    def test_dpf_keeps_dense(self):
        w = np.array([1.0, 2.0])
        dense, fw = apply_mask_semantics("dpf", w, np.array([False, True]))
        np.testing.assert_array_equal(dense, w)
        np.testing.assert_array_equal(fw, [0.0, 2.0])

    def test_dfp_mask_is_monotone(self):
        part = nn.kernel_partition([[0], [1], [2]])
        m = MaskState(3, part, [part], "dfp")
        m.update_hard([np.array([True, False, True])])
        m.update_hard([np.array([True, True, False])])
        np.testing.assert_array_equal(m.hard[0], [True, False, False])

    def test_dpf_mask_regrows(self):
        part = nn.kernel_partition([[0], [1]])
        m = MaskState(2, part, [part], "dpf")
        m.update_hard([np.array([False, True])])
        m.update_hard([np.array([True, True])])
        assert m.hard[0].all()


class TestSparsityMetrics:
    def part_and_mask(self):
        part = nn.kernel_partition([[0, 1], [2, 3], [4, 5], [6, 7]])
        return part, MaskState(8, part, [part])

    def test_fresh_mask(self):
        _, m = self.part_and_mask()
        assert sparsity_metrics(m) == (0.0, 0.0)

    def test_all_spike_and_pruned(self):
        _, m = self.part_and_mask()
        m.soft[:] = False
        m.update_hard([np.zeros(4, bool)])
        assert sparsity_metrics(m) == (1.0, 1.0)

    def test_three_of_four(self):
        _, m = self.part_and_mask()
        m.update_hard([np.array([False, False, True, False])])
        assert sparsity_metrics(m)[0] == 0.75


def test_config_validation():
    with pytest.raises(ValueError, match="delta0 must exceed delta1"):
        SpikeSlabConfig(delta0=1, delta1=100)
    with pytest.raises(ValueError):
        SpikeSlabConfig(mode="both")


# -- training-loop properties ------------------------------------------------


def bare_sghmc(cfg, train_set, delta):
    init_seed, batch_rng, noise_rng = training.run_streams(cfg.seed)
    _, params = nn.build_network(cfg.spec, init_seed, cfg.init_scale)
    N = len(train_set.y)
    T = cfg.epochs * math.ceil(N / cfg.batch_size)
    sched = training.make_schedule(cfg, T, N)
    state = SghmcState.init(params.values, tau0=cfg.tau0, lr=sched.lr, eta=sched.eta, k=sched.k, beta1=cfg.beta1,
                            beta2=cfg.beta2, delta=delta, n_train=N)
    for _ in range(cfg.epochs):
        for idx in training.minibatches(N, cfg.batch_size, batch_rng):
            batch = nn.Batch(train_set.X[idx], train_set.y[idx])
            sghmc_step(state, lambda w: nn.loss_and_grad(cfg.spec, w, batch), noise_rng)
    return state.w


@pytest.mark.parametrize("mode", ["dfp", "dpf"])
@pytest.mark.parametrize("disable", ["warmup", "lambda"])
def test_disabled_pruning_is_plain_sghmc(mode, disable):
    train_set, _, spec = tiny_example()
    T = 4 * math.ceil(len(train_set.y) / 50)
    ss = SpikeSlabConfig(delta0=100, delta1=2, lambda1=0.0 if disable == "lambda" else 0.05,
                         warmup_iters=T if disable == "warmup" else 0, em_interval=3, mode=mode)
    cfg = training.TrainConfig(spec, epochs=4, batch_size=50, seed=11, l0=0.01, cycles=2, spike_slab=ss)
    res = training.train_em_mcmc(cfg, train_set)
    assert res.w.tobytes() == bare_sghmc(cfg, train_set, 2.0).tobytes()


def test_dfp_pruned_set_only_grows_and_reads_zero():
    train_set, test_set, spec = tiny_example(p=20)
    ss = SpikeSlabConfig(delta0=1e4, delta1=1, lambda1=0.1, warmup_iters=40, em_interval=5, mode="dfp")
    cfg = training.TrainConfig(spec, epochs=12, batch_size=50, seed=3, l0=0.003, cycles=3, spike_slab=ss)
    res = training.train_em_mcmc(cfg, train_set, test_set, trace_weights=True)
    prev = set()
    for pruned, w in zip(res.pruned_trace, res.weight_trace):
        cur = set(pruned.tolist())
        assert prev <= cur
        assert np.all(w[pruned] == 0.0)
        prev = cur
    assert len(prev) > 0
    sp = [m.sparsity_ratio for m in res.metrics]
    assert sp == sorted(sp)


def test_dpf_forward_uses_masked_weights():
    train_set, _, spec = tiny_example(p=20)
    ss = SpikeSlabConfig(delta0=1e4, delta1=1, lambda1=0.1, warmup_iters=40, em_interval=5, mode="dpf")
    cfg = training.TrainConfig(spec, epochs=8, batch_size=50, seed=3, l0=0.003, cycles=2, spike_slab=ss)
    calls = {"pruned": 0, "dense_nonzero": 0}

    def observer(t, forward_w, dense_w, alive):
        if alive is None:
            assert forward_w is dense_w
            return
        np.testing.assert_array_equal(forward_w, dense_w * alive)
        if (~alive).any():
            calls["pruned"] += 1
            calls["dense_nonzero"] += bool(np.any(dense_w[~alive] != 0.0))

    training.train_em_mcmc(cfg, train_set, observer=observer)
    assert calls["pruned"] > 0
    assert calls["dense_nonzero"] == calls["pruned"]
