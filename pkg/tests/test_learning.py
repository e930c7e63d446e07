import numpy as np
import pytest

import floodtree as ft
from floodtree.errors import InitializationError
from floodtree.learning import (
    PosteriorTable,
    cumulative_scales,
    e_step,
    expected_complete_loglik,
    m_step,
    node_log_emissions,
    observed_loglik,
)
from floodtree.tree import DependencyTree

import bruteforce
from conftest import make_frame, random_instance


def log_close(got, want, atol=1e-9):
    """Compare log quantities, treating a shared -inf as equal."""
    got, want = np.asarray(got), np.asarray(want)
    both_ninf = np.isneginf(got) & np.isneginf(want)
    return np.all(both_ninf | (np.abs(got - want) <= atol))


def descaled_logs(tree, frame, params, msgs):
    """True log messages recovered from stored ones and their scales."""
    fcum, gcum = cumulative_scales(tree, msgs)
    log_e = node_log_emissions(tree, frame, params)
    return {
        "f_out": msgs.f_out_log + fcum[:, None],
        "f_in": msgs.f_out_log + fcum[:, None] - log_e,
        "g_out": msgs.g_out_log + gcum[:, None],
        "g_in": msgs.g_out_log + gcum[:, None] - log_e,
    }


def fabricated_tree(parent_sets):
    """Build a DependencyTree directly from per-node parent lists."""
    n = len(parent_sets)
    child = np.full(n, -1, dtype=np.int64)
    ptr = np.zeros(n + 1, dtype=np.int64)
    idx = []
    for v, ps in enumerate(parent_sets):
        for k in ps:
            assert k < v
            child[k] = v
            idx.append(k)
        ptr[v + 1] = len(idx)
    return DependencyTree(
        node_count=n,
        child=child,
        parent_ptr=ptr,
        parent_idx=np.array(idx, dtype=np.int64),
        cell_of_node=np.arange(n, dtype=np.int64),
        node_of_cell=np.arange(n, dtype=np.int64),
    )


class TestForwardBackwardSemantics:
    def test_single_node_messages(self):
        frame = make_frame([[2.0]], features=[[0.7]])
        tree = ft.build_tree(frame)
        params = ft.make_params(rho=0.9, pi=0.3, mu=[[0.0], [1.0]],
                                sigma=[[[1.0]], [[1.0]]])
        msgs = ft.forward_pass(tree, frame, params)
        ft.backward_pass(tree, frame, params, msgs)
        true = descaled_logs(tree, frame, params, msgs)
        np.testing.assert_allclose(
            np.exp(true["f_in"][0]), [0.7, 0.3], rtol=1e-12
        )
        e = np.exp(node_log_emissions(tree, frame, params)[0])
        np.testing.assert_allclose(
            np.exp(true["f_out"][0]), [0.7 * e[0], 0.3 * e[1]], rtol=1e-12
        )
        np.testing.assert_array_equal(msgs.g_in_log[0], [0.0, 0.0])  # root case

    def test_two_node_chain_matches_enumeration(self, rng):
        frame = make_frame([[1.0, 2.0]], features=[[0.3, -0.8]])
        tree = ft.build_tree(frame)
        params = ft.make_params(rho=0.8, pi=0.4, mu=[[0.0], [1.0]],
                                sigma=[[[1.0]], [[1.5]]])
        log_e = node_log_emissions(tree, frame, params)
        msgs = ft.forward_pass(tree, frame, params)
        ft.backward_pass(tree, frame, params, msgs)
        true = descaled_logs(tree, frame, params, msgs)
        want = bruteforce.message_semantics(tree, log_e, params.rho, params.pi)
        for key in ("f_in", "f_out", "g_in", "g_out"):
            assert log_close(true[key], want[key]), key

    def test_two_parent_collapse_formula(self):
        # star: two leaves feeding one root; compare against the
        # closed form with both parent messages equal
        tree = fabricated_tree([[], [], [0, 1]])
        frame = make_frame([[1.0, 2.0, 3.0]], features=[[0.0, 0.0, 0.0]])
        params = ft.make_params(rho=0.7, pi=0.35, mu=[[0.0], [0.0]],
                                sigma=[[[1.0]], [[1.0]]])
        msgs = ft.forward_pass(tree, frame, params)
        true = descaled_logs(tree, frame, params, msgs)
        e0 = np.exp(ft.log_emission(params, [0.0], 0))
        a0, a1 = 0.65 * e0, 0.35 * e0  # each leaf f_out
        want1 = 0.7 * a1 * a1
        want0 = (a0 + a1) ** 2 - a1 * a1 + 0.3 * a1 * a1
        np.testing.assert_allclose(np.exp(true["f_in"][2]), [want0, want1], rtol=1e-12)

    def test_random_instances_match_enumeration(self, rng):
        for trial in range(40):
            frame, tree, params = random_instance(rng, max_cells=10,
                                                  masked=trial % 3 == 0)
            log_e = node_log_emissions(tree, frame, params)
            msgs, post, ll = e_step(tree, frame, params)
            true = descaled_logs(tree, frame, params, msgs)
            want = bruteforce.message_semantics(tree, log_e, params.rho, params.pi)
            for key in ("f_in", "f_out", "g_in", "g_out"):
                assert log_close(true[key], want[key]), (trial, key)

    def test_normalizer_matches_total_probability(self, rng):
        for trial in range(20):
            frame, tree, params = random_instance(rng, max_cells=10,
                                                  masked=trial % 2 == 0)
            log_e = node_log_emissions(tree, frame, params)
            msgs = ft.forward_pass(tree, frame, params)
            want = bruteforce.log_restricted_sum(
                bruteforce.parent_lists(tree), log_e, params.rho, params.pi
            )
            assert observed_loglik(tree, msgs) == pytest.approx(want, abs=1e-9)

    def test_stored_message_invariants(self, rng):
        frame, tree, params = random_instance(rng, max_cells=12)
        log_e = node_log_emissions(tree, frame, params)
        msgs, _, _ = e_step(tree, frame, params)
        for name in ("f_in", "f_out", "g_in", "g_out"):
            stored = getattr(msgs, name)
            assert (stored >= 0.0).all()
            assert np.isfinite(stored).all()
            np.testing.assert_array_equal(stored.max(axis=1), 1.0)
        # shared scaling: log f_out = log f_in + log_e - per-node constant
        shift = msgs.f_in_log + log_e - msgs.f_out_log
        np.testing.assert_allclose(shift[:, 0], shift[:, 1], atol=1e-12)
        shift_g = msgs.g_in_log + log_e - msgs.g_out_log
        np.testing.assert_allclose(shift_g[:, 0], shift_g[:, 1], atol=1e-12)

    def test_deep_ratio_chain_stays_representable(self):
        # 2000-cell ramp with strongly one-sided emissions: class ratios
        # drift far past the linear-domain range
        n = 2000
        elev = np.arange(n, dtype=np.float64).reshape(1, n)
        x = np.full((1, n), 3.0)
        frame = make_frame(elev, features=x)
        tree = ft.build_tree(frame)
        params = ft.make_params(rho=0.99, pi=0.5, mu=[[0.0], [3.0]],
                                sigma=[[[0.5]], [[0.5]]])
        msgs, post, ll = e_step(tree, frame, params)
        assert np.isfinite(ll)
        assert np.isfinite(post.node_marginal).all()
        np.testing.assert_allclose(post.node_marginal.sum(axis=1), 1.0, atol=1e-12)


class TestCollapseEquivalence:
    def test_collapse_equals_direct_sum_up_to_eight_parents(self, rng):
        for n_par in range(1, 9):
            tree = fabricated_tree([[] for _ in range(n_par)] + [list(range(n_par))])
            elev = np.arange(n_par + 1, dtype=np.float64).reshape(1, -1)
            x = rng.normal(0.5, 1.0, size=(1, n_par + 1))
            frame = make_frame(elev, features=x)
            params = ft.make_params(rho=0.77, pi=0.41, mu=[[0.0], [1.0]],
                                    sigma=[[[1.0]], [[1.0]]])
            msgs = ft.forward_pass(tree, frame, params)
            true = descaled_logs(tree, frame, params, msgs)
            # direct sum over all 2^P parent configurations
            f_out_parents = np.exp(true["f_out"][:n_par])
            direct = np.zeros(2)
            for bits in range(1 << n_par):
                cfg = [(bits >> i) & 1 for i in range(n_par)]
                w = np.prod([f_out_parents[i, c] for i, c in enumerate(cfg)])
                q = int(all(cfg))
                for y in (0, 1):
                    t = np.exp(ft.log_transition(y, q, params))
                    direct[y] += w * t
            np.testing.assert_allclose(
                np.exp(true["f_in"][n_par]), direct, rtol=1e-12
            )


class TestPosteriors:
    def test_single_node_bayes_rule(self):
        frame = make_frame([[1.0]], features=[[0.9]])
        tree = ft.build_tree(frame)
        params = ft.make_params(rho=0.9, pi=0.25, mu=[[0.0], [1.0]],
                                sigma=[[[1.0]], [[1.0]]])
        _, post, _ = e_step(tree, frame, params)
        e = np.exp(node_log_emissions(tree, frame, params)[0])
        want1 = 0.25 * e[1] / (0.25 * e[1] + 0.75 * e[0])
        assert post.node_marginal[0, 1] == pytest.approx(want1, rel=1e-12)

    def test_matches_exhaustive_enumeration(self, rng):
        for trial in range(30):
            frame, tree, params = random_instance(rng, max_cells=12,
                                                  masked=trial % 4 == 0)
            log_e = node_log_emissions(tree, frame, params)
            _, post, ll = e_step(tree, frame, params)
            logZ, node, pair = bruteforce.exhaustive_posteriors(
                tree, log_e, params.rho, params.pi
            )
            np.testing.assert_allclose(post.node_marginal, node, atol=1e-9)
            np.testing.assert_allclose(post.pair_marginal, pair, atol=1e-9)
            assert ll == pytest.approx(logZ, abs=1e-9)

    def test_table_invariants(self, rng):
        for _ in range(10):
            frame, tree, params = random_instance(rng, max_cells=12)
            _, post, _ = e_step(tree, frame, params)
            np.testing.assert_allclose(post.node_marginal.sum(axis=1), 1.0, atol=1e-12)
            assert (post.pair_marginal[:, 1, 0] == 0.0).all()
            nonleaf = tree.parent_counts > 0
            np.testing.assert_allclose(
                post.pair_marginal[nonleaf].sum(axis=(1, 2)), 1.0, atol=1e-12
            )
            # marginal consistency: summing the pair over the product
            # axis recovers the node marginal
            np.testing.assert_allclose(
                post.pair_marginal[nonleaf].sum(axis=2),
                post.node_marginal[nonleaf],
                atol=1e-9,
            )


class TestMStep:
    def tiny_frame(self, xs):
        elev = np.arange(len(xs), dtype=np.float64).reshape(1, -1)
        return make_frame(elev, features=np.array(xs, dtype=np.float64).reshape(1, -1))

    def test_single_leaf_prior(self):
        frame = self.tiny_frame([0.0])
        tree = ft.build_tree(frame)
        post = PosteriorTable(
            node_marginal=np.array([[0.3, 0.7]]),
            pair_marginal=np.zeros((1, 2, 2)),
        )
        params = m_step(tree, frame, post)
        assert params.pi == pytest.approx(0.7, rel=1e-12)

    def test_single_pair_transition(self):
        frame = self.tiny_frame([0.0, 1.0])
        tree = ft.build_tree(frame)
        pair = np.zeros((2, 2, 2))
        pair[1, 1, 1] = 0.5
        pair[1, 0, 1] = 0.25
        pair[1, 0, 0] = 0.25
        post = PosteriorTable(
            node_marginal=np.array([[0.5, 0.5], [0.5, 0.5]]),
            pair_marginal=pair,
        )
        params = m_step(tree, frame, post)
        assert params.rho == pytest.approx(2.0 / 3.0, rel=1e-12)

    def test_weighted_gaussian_moments(self):
        frame = self.tiny_frame([0.0, 2.0])
        tree = ft.build_tree(frame)
        post = PosteriorTable(
            node_marginal=np.array([[0.0, 1.0], [0.0, 1.0]]),
            pair_marginal=np.zeros((2, 2, 2)),
        )
        fallback = ft.make_params(rho=0.9, pi=0.5, mu=[[0.0], [0.0]],
                                  sigma=[[[1.0]], [[1.0]]])
        params = m_step(tree, frame, post, prev_params=fallback)
        assert params.mu[1, 0] == pytest.approx(1.0)
        assert params.sigma[1, 0, 0] == pytest.approx(1.0)  # mean squared deviation

    def test_update_maximizes_expected_complete_loglik(self, rng):
        frame, tree, params0 = random_instance(rng, max_cells=10)
        _, post, _ = e_step(tree, frame, params0)
        fitted = m_step(tree, frame, post, prev_params=params0)
        base = expected_complete_loglik(tree, frame, post, fitted)
        m = fitted.n_bands
        for which in range(2 + 2 * m + 2 * m * m):
            for sign in (-1.0, 1.0):
                rho, pi = fitted.rho, fitted.pi
                mu = fitted.mu.copy()
                sigma = fitted.sigma.copy()
                if which == 0:
                    rho += sign * 1e-3
                elif which == 1:
                    pi += sign * 1e-3
                elif which < 2 + 2 * m:
                    c, j = divmod(which - 2, m)
                    mu[c, j] += sign * 1e-3
                else:
                    c, rest = divmod(which - 2 - 2 * m, m * m)
                    i, j = divmod(rest, m)
                    sigma[c, i, j] += sign * 1e-3
                    sigma[c, j, i] = sigma[c, i, j]
                try:
                    perturbed = ft.HmtParams(rho=rho, pi=pi, mu=mu, sigma=sigma)
                    q = expected_complete_loglik(tree, frame, post, perturbed)
                except Exception:
                    continue
                assert q <= base + 1e-10, (which, sign)


class TestInitialize:
    def test_class_sample_moments(self):
        params = ft.initialize_from_samples(
            np.array([[0.0], [0.0], [1.0], [3.0]]), np.array([0, 0, 1, 1])
        )
        assert params.mu[1, 0] == pytest.approx(2.0)
        assert params.sigma[1, 0, 0] == pytest.approx(1.0)  # MLE normalization

    def test_default_probabilities(self):
        params = ft.initialize_from_samples(
            np.array([[0.0], [1.0], [2.0], [3.0]]), np.array([0, 0, 1, 1])
        )
        assert params.pi == 0.5
        assert params.rho == 0.99

    def test_empty_class_raises(self):
        with pytest.raises(InitializationError):
            ft.initialize_from_samples(np.array([[1.0], [2.0]]), np.array([0, 0]))

    def test_too_few_samples_for_dimension(self):
        x = np.array([[1.0, 2.0], [0.0, 1.0], [4.0, 5.0]])
        with pytest.raises(InitializationError):
            ft.initialize_from_samples(x, np.array([0, 0, 1]))

    def test_from_frame_label_records(self):
        frame = make_frame(
            [[1.0, 2.0, 3.0, 4.0]], features=[[0.0, 2.0, 10.0, 14.0]]
        )
        records = np.array([[0, 0, 0], [0, 1, 0], [0, 2, 1], [0, 3, 1]])
        params = ft.initialize(frame, records)
        assert params.mu[0, 0] == pytest.approx(1.0)
        assert params.mu[1, 0] == pytest.approx(12.0)


class TestEmFit:
    def test_loglik_nondecreasing(self, rng):
        for trial in range(10):
            frame, tree, params = random_instance(rng, max_cells=12)
            res = ft.em_fit(tree, frame, params0=params, epsilon=1e-7, max_iters=40)
            lls = np.array([t[3] for t in res.trace])
            assert np.all(np.diff(lls) >= -1e-8 * np.abs(lls[:-1])), trial

    def test_recovers_generating_parameters(self):
        # sample classes from the model itself on a rough field (many
        # leaves), then check the fit lands near the generator
        rng = np.random.default_rng(99)
        rows = cols = 100
        elev = rng.random((rows, cols))
        frame0 = make_frame(elev)
        tree = ft.build_tree(frame0)
        rho_true, pi_true = 0.9, 0.3
        y = np.zeros(tree.node_count, dtype=np.int8)
        for v in range(tree.node_count):
            ps = tree.parents(v)
            if ps.size == 0:
                y[v] = rng.random() < pi_true
            elif all(y[k] for k in ps):
                y[v] = rng.random() < rho_true
        x = np.where(y == 1, 2.0, 0.0) + rng.normal(0, 1.0, size=tree.node_count)
        feats = np.zeros(rows * cols)
        feats[tree.cell_of_node] = x
        frame = make_frame(elev, features=feats.reshape(rows, cols))
        params0 = ft.make_params(rho=0.8, pi=0.5, mu=[[0.1], [1.8]],
                                 sigma=[[[1.2]], [[1.2]]])
        res = ft.em_fit(tree, frame, params0=params0, epsilon=1e-6, max_iters=200)
        assert abs(res.params.pi - pi_true) < 0.05
        assert abs(res.params.rho - rho_true) < 0.05

    def test_convergence_flag_and_trace_shape(self, rng):
        frame, tree, params = random_instance(rng, max_cells=10)
        res = ft.em_fit(tree, frame, params0=params, epsilon=1e-5, max_iters=50)
        assert res.n_iters == len(res.trace)
        it, pi, rho, ll = res.trace[0]
        assert it == 1 and 0 < pi < 1 and 0 < rho < 1 and np.isfinite(ll)

    def test_nonconvergence_flag(self, rng):
        frame, tree, params = random_instance(rng, max_cells=10)
        res = ft.em_fit(tree, frame, params0=params, epsilon=0.0, max_iters=2)
        assert not res.converged
        assert res.n_iters == 2

    def test_training_tuple_initialization(self, rng):
        frame, tree, _ = random_instance(rng, max_cells=10)
        x = np.concatenate([rng.normal(0, 1, 30), rng.normal(3, 1, 30)]).reshape(-1, 1)
        y = np.repeat([0, 1], 30)
        res = ft.em_fit(tree, frame, (x, y), epsilon=1e-4, max_iters=20)
        assert np.isfinite(res.trace[-1][3])

    def test_clamp_labels_fixes_posteriors(self):
        rng = np.random.default_rng(5)
        elev = rng.normal(size=(3, 4))
        feats = rng.normal(size=(3, 4))
        labels = np.full(12, -1, dtype=np.int8)
        labels[0] = 1
        labels[7] = 0
        frame = ft.frame_from_arrays(elev, features=feats, labels=labels)
        tree = ft.build_tree(frame)
        params = ft.make_params(rho=0.9, pi=0.5, mu=[[0.0], [0.5]],
                                sigma=[[[1.0]], [[1.0]]])
        from floodtree.learning import node_log_emissions as nle
        log_e = nle(tree, frame, params)
        nodes = tree.node_of_cell[[0, 7]]
        log_e[nodes[0], 0] = -np.inf
        log_e[nodes[1], 1] = -np.inf
        _, post, _ = e_step(tree, frame, params, log_e=log_e)
        assert post.node_marginal[nodes[0], 1] == pytest.approx(1.0)
        assert post.node_marginal[nodes[1], 0] == pytest.approx(1.0)

    def test_multi_component_forest_loglik(self, rng):
        # masked frame splits in two; total likelihood is the product
        elev = np.array([[1.0, 2.0, np.nan, 1.5, 0.5]])
        feats = np.array([[0.1, -0.2, 0.0, 0.4, 1.2]])
        frame = make_frame(elev, features=feats)
        tree = ft.build_tree(frame)
        assert tree.roots.size == 2
        params = ft.make_params(rho=0.8, pi=0.3, mu=[[0.0], [1.0]],
                                sigma=[[[1.0]], [[1.0]]])
        log_e = node_log_emissions(tree, frame, params)
        msgs = ft.forward_pass(tree, frame, params)
        want = bruteforce.log_restricted_sum(
            bruteforce.parent_lists(tree), log_e, params.rho, params.pi
        )
        assert observed_loglik(tree, msgs) == pytest.approx(want, abs=1e-10)
