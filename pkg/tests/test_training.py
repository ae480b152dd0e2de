import numpy as np
import pytest

from dpn import (
    Config,
    SynthSpec,
    ema_update,
    generate_synthetic,
    identity_head,
    random_head,
    soft_assignment_loss,
    total_loss,
    train,
)
from dpn.alignment import PrototypeSet
from dpn.exceptions import DimensionError, ShapeError, ZeroNormError
from dpn.head import ProjectionHead
from dpn.losses import hard_assignment_loss
from dpn.training import load_checkpoint, save_checkpoint, write_loss_trace
from helpers import finite_difference_gradient, relative_error


class TestProjectionHead:
    def test_identity_init_is_identity_map(self):
        head = identity_head(4)
        x = np.array([1.0, -2.0, 3.0, 0.5])
        np.testing.assert_array_equal(head.forward(x), x)

    def test_zero_head_output_trips_zero_norm_downstream(self):
        head = ProjectionHead(np.zeros((2, 2)), np.zeros(2))
        z = head.forward(np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(z, np.zeros((1, 2)))
        with pytest.raises(ZeroNormError):
            soft_assignment_loss(z, [[1.0, 0.0]], 0.07)

    def test_forward_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        head = random_head(5, 3, rng)
        X = rng.normal(size=(4, 5))
        Z = head.forward(X)
        for i in range(4):
            for j in range(3):
                expected = sum(X[i, k] * head.weights[k, j] for k in range(5)) + head.bias[j]
                assert Z[i, j] == pytest.approx(expected, abs=1e-12)

    def test_forward_dim_mismatch(self):
        with pytest.raises(DimensionError):
            identity_head(3).forward(np.array([1.0, 2.0]))

    def test_backward_matches_finite_differences_tanh(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(6, 3))
        coeffs = rng.normal(size=(6, 2))
        W0 = rng.normal(size=(3, 2))
        b0 = rng.normal(size=2)

        def loss_of(W, b):
            head = ProjectionHead(W, b, activation="tanh")
            return float((head.forward(X) * coeffs).sum())

        head = ProjectionHead(W0, b0, activation="tanh")
        Z = head.forward(X)
        gW, gb = head.backward(X, Z, coeffs)
        assert relative_error(gW, finite_difference_gradient(lambda W: loss_of(W, b0), W0)) < 1e-4
        assert relative_error(gb, finite_difference_gradient(lambda b: loss_of(W0, b), b0)) < 1e-4


class TestEmaUpdate:
    def test_alpha_one_keeps_old(self):
        old, new = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        np.testing.assert_array_equal(ema_update(old, new, 1.0), old)

    def test_alpha_zero_takes_new(self):
        old, new = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        np.testing.assert_array_equal(ema_update(old, new, 0.0), new)

    def test_direct_arithmetic(self):
        out = ema_update(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.9)
        np.testing.assert_allclose(out, [0.9, 0.1], atol=1e-15)

    def test_contraction_toward_new(self):
        rng = np.random.default_rng(2)
        old, new = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        for alpha in (0.0, 0.3, 0.9, 1.0):
            out = ema_update(old, new, alpha)
            assert np.linalg.norm(out - new) == pytest.approx(
                alpha * np.linalg.norm(old - new), rel=1e-12
            )

    def test_prototype_set_variant(self):
        old = PrototypeSet(np.zeros((2, 2)), kind="labeled", category_ids=("a", "b"))
        new = PrototypeSet(np.ones((2, 2)), kind="labeled", category_ids=("a", "b"))
        out = ema_update(old, new, 0.75)
        np.testing.assert_allclose(out.vectors, 0.25 * np.ones((2, 2)))
        assert out.category_ids == ("a", "b")

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ema_update(np.zeros((2, 2)), np.zeros((3, 2)), 0.5)


def _fitted_pieces(config=None, seed=3):
    ds = generate_synthetic(
        SynthSpec(n_categories=4, n_known=2, dim=5, per_class=12,
                  cluster_std=0.5, center_separation=8.0, seed=seed)
    )
    config = config if config is not None else Config(n_clusters=4, epochs=0, seed=seed)
    state = train(ds, config)
    return ds, state


class TestTotalLoss:
    def _call(self, ds, state, config):
        index_of = {c: i for i, c in enumerate(ds.label_space.known_ids)}
        label_idx = np.array([index_of[y] for y in ds.labeled.y])
        return total_loss(
            state.head,
            ds.labeled.X,
            label_idx,
            ds.unlabeled.X,
            state.decoupling,
            state.clustering.assignment,
            state.labeled_prototypes,
            state.unlabeled_prototypes,
            state.match,
            config,
            ce_weights=state.ce_weights,
            ce_bias=state.ce_bias,
        )

    def test_breakdown_identity(self):
        ds, state = _fitted_pieces()
        config = Config(n_clusters=4, epochs=0, seed=3, gamma=10.0, tau=0.07)
        b, _ = self._call(ds, state, config)
        assert b.known_total == pytest.approx(
            b.soft_known + b.cross_entropy + 10.0 * b.regularizer, abs=1e-9
        )
        assert b.total == pytest.approx(b.soft_novel + b.known_total, abs=1e-9)

    def test_zero_gamma_no_ce_composition(self):
        ds, state = _fitted_pieces()
        config = Config(n_clusters=4, epochs=0, seed=3, gamma=0.0,
                        ablations=frozenset({"no_ce"}))
        b, _ = self._call(ds, state, config)
        Z_u = state.head.forward(ds.unlabeled.X)
        dec, match = state.decoupling, state.match
        novel, _ = soft_assignment_loss(
            Z_u[dec.novel_indices],
            state.unlabeled_prototypes.vectors[list(match.unmatched)],
            config.tau,
        )
        known, _ = soft_assignment_loss(
            Z_u[dec.known_indices],
            state.unlabeled_prototypes.vectors[list(match.matched)],
            config.tau,
        )
        assert b.cross_entropy == 0.0
        assert b.total == pytest.approx(novel + known, abs=1e-9)

    def test_no_decouple_is_coupled_objective(self):
        ds, state = _fitted_pieces()
        config = Config(n_clusters=4, epochs=0, seed=3, ablations=frozenset({"no_decouple"}))
        b, _ = self._call(ds, state, config)
        Z_u = state.head.forward(ds.unlabeled.X)
        coupled, _ = soft_assignment_loss(Z_u, state.unlabeled_prototypes.vectors, config.tau)
        assert b.soft_novel == pytest.approx(coupled, abs=1e-12)
        assert b.soft_known == 0.0
        assert b.regularizer == 0.0
        assert b.cross_entropy > 0.0

    def test_no_soft_assignment_uses_hard_loss(self):
        ds, state = _fitted_pieces()
        config = Config(n_clusters=4, epochs=0, seed=3,
                        ablations=frozenset({"no_soft_assignment"}))
        b, _ = self._call(ds, state, config)
        Z_u = state.head.forward(ds.unlabeled.X)
        dec, match = state.decoupling, state.match
        expected, _ = hard_assignment_loss(
            Z_u[dec.novel_indices],
            dec.novel_prototype_pos,
            state.unlabeled_prototypes.vectors[list(match.unmatched)],
        )
        assert b.soft_novel == pytest.approx(expected, abs=1e-12)

    def test_parameter_gradient_matches_finite_differences(self):
        ds, state = _fitted_pieces(seed=5)
        config = Config(n_clusters=4, epochs=0, seed=5, gamma=3.0)
        index_of = {c: i for i, c in enumerate(ds.label_space.known_ids)}
        label_idx = np.array([index_of[y] for y in ds.labeled.y])

        def loss_of(W, b):
            head = ProjectionHead(W, b, activation=state.head.activation)
            breakdown, _ = total_loss(
                head, ds.labeled.X, label_idx, ds.unlabeled.X,
                state.decoupling, state.clustering.assignment,
                state.labeled_prototypes, state.unlabeled_prototypes,
                state.match, config,
            )
            return breakdown.total

        _, grads = self._call(ds, state, config)
        W0, b0 = state.head.weights, state.head.bias
        fd_W = finite_difference_gradient(lambda W: loss_of(W, b0), W0)
        fd_b = finite_difference_gradient(lambda b: loss_of(W0, b), b0)
        assert relative_error(grads["weights"], fd_W) < 1e-4
        assert relative_error(grads["bias"], fd_b) < 1e-4


class TestTrainLoop:
    def test_loss_decreases_on_separated_data(self):
        ds = generate_synthetic(
            SynthSpec(n_categories=6, n_known=4, dim=16, per_class=50,
                      cluster_std=0.5, center_separation=8.0, seed=7)
        )
        state = train(ds, Config(n_clusters=6, epochs=12, seed=7))
        totals = [b.total for b in state.loss_trace]
        assert len(totals) == 12
        for earlier, later in zip(totals[:10], totals[1:11]):
            assert later < earlier + 1e-6

    def test_zero_learning_rate_is_constant(self):
        ds, _ = _fitted_pieces(seed=9)
        state = train(ds, Config(n_clusters=4, epochs=5, learning_rate=0.0, seed=9))
        totals = [b.total for b in state.loss_trace]
        assert all(t == totals[0] for t in totals)
        np.testing.assert_array_equal(state.head.weights, np.eye(5))

    def test_zero_epochs_keeps_initialization(self):
        ds, state = _fitted_pieces(seed=11)
        assert state.loss_trace == ()
        np.testing.assert_array_equal(state.head.weights, np.eye(5))
        np.testing.assert_array_equal(state.head.bias, np.zeros(5))

    def test_training_is_bit_deterministic(self):
        ds = generate_synthetic(
            SynthSpec(n_categories=4, n_known=2, dim=6, per_class=15,
                      cluster_std=0.6, center_separation=7.0, seed=13)
        )
        config = Config(n_clusters=4, epochs=6, seed=13)
        a = train(ds, config)
        b = train(ds, config)
        assert [x.total for x in a.loss_trace] == [x.total for x in b.loss_trace]
        np.testing.assert_array_equal(a.head.weights, b.head.weights)
        np.testing.assert_array_equal(
            a.labeled_prototypes.vectors, b.labeled_prototypes.vectors
        )

    def test_unlabeled_prototypes_stay_fixed(self):
        ds = generate_synthetic(
            SynthSpec(n_categories=4, n_known=2, dim=6, per_class=15,
                      cluster_std=0.6, center_separation=7.0, seed=15)
        )
        before = train(ds, Config(n_clusters=4, epochs=0, seed=15))
        after = train(ds, Config(n_clusters=4, epochs=8, seed=15))
        np.testing.assert_array_equal(
            before.unlabeled_prototypes.vectors, after.unlabeled_prototypes.vectors
        )
        assert before.match.permutation == after.match.permutation
        assert after.unlabeled_prototypes.vectors.flags.writeable is False

    def test_alpha_one_freezes_labeled_prototypes(self):
        ds, initial = _fitted_pieces(seed=17)
        trained = train(ds, Config(n_clusters=4, epochs=6, alpha=1.0, seed=17))
        np.testing.assert_array_equal(
            initial.labeled_prototypes.vectors, trained.labeled_prototypes.vectors
        )

    def test_no_ema_overwrites_prototypes(self):
        ds = generate_synthetic(
            SynthSpec(n_categories=4, n_known=2, dim=6, per_class=15,
                      cluster_std=0.6, center_separation=7.0, seed=19)
        )
        with_ema = train(ds, Config(n_clusters=4, epochs=6, seed=19))
        without = train(ds, Config(n_clusters=4, epochs=6, seed=19,
                                   ablations=frozenset({"no_ema"})))
        assert not np.array_equal(
            with_ema.labeled_prototypes.vectors, without.labeled_prototypes.vectors
        )

    def test_estimated_category_count_path(self):
        ds = generate_synthetic(
            SynthSpec(n_categories=4, n_known=2, dim=6, per_class=20,
                      cluster_std=0.4, center_separation=8.0, seed=21)
        )
        state = train(ds, Config(n_clusters="estimate", k_max=8, epochs=2, seed=21))
        assert state.n_clusters == 4

    def test_rematch_and_recluster_flags_run(self):
        ds = generate_synthetic(
            SynthSpec(n_categories=4, n_known=2, dim=6, per_class=15,
                      cluster_std=0.6, center_separation=7.0, seed=23)
        )
        train(ds, Config(n_clusters=4, epochs=4, rematch_period=2, seed=23))
        train(ds, Config(n_clusters=4, epochs=4, recluster_period=2, seed=23))

    def test_unknown_label_rejected(self):
        from dpn import LabelSpace, fit_arrays
        from dpn.exceptions import LabelError

        rng = np.random.default_rng(31)
        with pytest.raises(LabelError):
            fit_arrays(
                rng.normal(size=(4, 3)),
                ["a", "a", "b", "mystery"],
                rng.normal(size=(8, 3)),
                LabelSpace(("a", "b")),
                Config(n_clusters=2, epochs=0, seed=0),
            )

    def test_hidden_ground_truth_cannot_influence_training(self):
        # scrambling the unlabeled sidecar labels must leave training
        # untouched: the training path only ever sees the vectors
        from dpn.data import Dataset

        ds = generate_synthetic(
            SynthSpec(n_categories=4, n_known=2, dim=6, per_class=15,
                      cluster_std=0.6, center_separation=7.0, seed=33)
        )
        scrambled = Dataset(
            labeled=ds.labeled,
            unlabeled=ds.unlabeled,
            test=ds.test,
            label_space=ds.label_space,
            unlabeled_truth=tuple(reversed(ds.unlabeled_truth)),
        )
        config = Config(n_clusters=4, epochs=5, seed=33)
        a = train(ds, config)
        b = train(scrambled, config)
        np.testing.assert_array_equal(a.head.weights, b.head.weights)
        assert [x.total for x in a.loss_trace] == [x.total for x in b.loss_trace]

    def test_linear_ce_head_trains(self):
        ds = generate_synthetic(
            SynthSpec(n_categories=4, n_known=2, dim=6, per_class=15,
                      cluster_std=0.6, center_separation=7.0, seed=25)
        )
        state = train(ds, Config(n_clusters=4, epochs=4, ce_head="linear", seed=25))
        assert state.ce_weights is not None
        assert state.ce_weights.shape == (6, 2)
        assert not np.array_equal(state.ce_weights, np.zeros((6, 2)))


class TestCheckpointRoundTrip:
    def test_round_trip_bits(self, tmp_path):
        ds = generate_synthetic(
            SynthSpec(n_categories=4, n_known=2, dim=6, per_class=15,
                      cluster_std=0.6, center_separation=7.0, seed=27)
        )
        state = train(ds, Config(n_clusters=4, epochs=5, seed=27))
        path = tmp_path / "ckpt.txt"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.head.weights, state.head.weights)
        np.testing.assert_array_equal(loaded.head.bias, state.head.bias)
        np.testing.assert_array_equal(
            loaded.labeled_prototypes.vectors, state.labeled_prototypes.vectors
        )
        np.testing.assert_array_equal(
            loaded.unlabeled_prototypes.vectors, state.unlabeled_prototypes.vectors
        )
        assert loaded.match.permutation == state.match.permutation
        assert loaded.match.unmatched == state.match.unmatched
        assert loaded.label_space == state.label_space
        assert loaded.config == state.config

    def test_loaded_state_evaluates_identically(self, tmp_path):
        from dpn import evaluate

        ds = generate_synthetic(
            SynthSpec(n_categories=4, n_known=2, dim=6, per_class=15,
                      cluster_std=0.6, center_separation=7.0, seed=28)
        )
        state = train(ds, Config(n_clusters=4, epochs=4, seed=28))
        path = tmp_path / "ckpt.txt"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        a = evaluate(state, ds.test, ds.label_space)
        b = evaluate(loaded, ds.test, ds.label_space)
        assert (a.acc_all, a.acc_known, a.acc_novel) == (b.acc_all, b.acc_known, b.acc_novel)
        np.testing.assert_array_equal(a.confusion, b.confusion)
        np.testing.assert_array_equal(a.prototype_distances, b.prototype_distances)

    def test_loss_trace_file(self, tmp_path):
        ds = generate_synthetic(
            SynthSpec(n_categories=4, n_known=2, dim=6, per_class=15,
                      cluster_std=0.6, center_separation=7.0, seed=29)
        )
        state = train(ds, Config(n_clusters=4, epochs=3, seed=29))
        path = tmp_path / "trace.tsv"
        write_loss_trace(path, state.loss_trace)
        lines = path.read_text().splitlines()
        assert lines[0].split("\t")[0] == "epoch"
        assert len(lines) == 4
        first = lines[1].split("\t")
        assert float(first[6]) == state.loss_trace[0].total
