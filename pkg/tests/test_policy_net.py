"""
Test suite for the Actor and Critic Networks

Tests forward passes, the Gaussian head, analytic gradients against finite
differences, the optimizer and checkpoint files.
"""

import json
import math
import os
import sys

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from faults import CheckpointError, ModelShapeError, TrainingFault
from learning.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from learning.optimizer import Adam, clip_grad_norm
from learning.policy_net import (
    FULL_WIDTH,
    INITIAL_LOG_STD,
    RESTRICTED_WIDTH,
    LossDefinition,
    Minibatch,
    MlpParams,
    actor_forward,
    backward,
    critic_forward,
    evaluate_loss,
    gaussian_log_prob,
    init_mlp,
    orthogonal,
    sample_action,
)


def make_networks(actor_width, hidden=(5, 4), seed=0):
    """Small networks with a non-trivial actor output layer"""
    rng = np.random.default_rng(seed)
    actor = init_mlp(actor_width, rng, actor=True, hidden_sizes=hidden)
    critic = init_mlp(FULL_WIDTH, rng, actor=False, hidden_sizes=hidden)
    actor.weights[-1] *= 50.0
    for net in (actor, critic):
        for bias in net.biases:
            bias += rng.uniform(-0.1, 0.1, bias.shape)
    return actor, critic


def make_batch(actor, critic, size=6, seed=1, ratio_jitter=0.05):
    """Transitions whose probability ratios stay well inside the clip range"""
    rng = np.random.default_rng(seed)
    actor_obs = rng.normal(0.0, 0.3, (size, actor.input_width))
    critic_obs = rng.normal(0.0, 0.3, (size, critic.input_width))
    perturbation = rng.uniform(-0.3, 0.3, size)
    mean = actor_forward(actor, actor_obs) + perturbation
    std = math.exp(actor.log_std[0])
    actions = mean + std * rng.standard_normal(size)
    new_log_probs = gaussian_log_prob(actions, mean, actor.log_std[0])
    return Minibatch(
        actor_obs=actor_obs,
        critic_obs=critic_obs,
        actions=actions,
        old_log_probs=new_log_probs + rng.uniform(-ratio_jitter, ratio_jitter, size),
        advantages=rng.normal(0.0, 1.0, size),
        returns=rng.normal(0.0, 1.0, size),
        perturbation=perturbation,
    )


def finite_difference_check(actor, critic, batch, loss, max_entries=None, h=1e-5):
    _, actor_grads, critic_grads = backward(actor, critic, batch, loss)
    rng = np.random.default_rng(2)
    for net, grads in ((actor, actor_grads), (critic, critic_grads)):
        for param, grad in zip(net.arrays(), grads.arrays()):
            flat_indices = np.arange(param.size)
            if max_entries is not None and param.size > max_entries:
                flat_indices = rng.choice(param.size, max_entries, replace=False)
            for flat in flat_indices:
                index = np.unravel_index(flat, param.shape)
                original = param[index]
                param[index] = original + h
                upper = evaluate_loss(actor, critic, batch, loss)[0].total
                param[index] = original - h
                lower = evaluate_loss(actor, critic, batch, loss)[0].total
                param[index] = original
                numeric = (upper - lower) / (2 * h)
                assert abs(grad[index] - numeric) / max(1.0, abs(grad[index])) < 1e-4


class TestForward:
    """Test cases for forward passes"""

    def test_zero_parameters_give_zero(self):
        """Test all-zero networks output zero"""
        actor = init_mlp(FULL_WIDTH, np.random.default_rng(0), actor=True).zeros_like()
        critic = init_mlp(FULL_WIDTH, np.random.default_rng(0), actor=False).zeros_like()
        obs = np.ones((4, FULL_WIDTH))
        np.testing.assert_array_equal(actor_forward(actor, obs), np.zeros(4))
        np.testing.assert_array_equal(critic_forward(critic, obs), np.zeros(4))

    def test_actor_mean_bounded(self):
        """Test the actor mean stays inside (-1, 1) for wild inputs"""
        actor, _ = make_networks(FULL_WIDTH)
        obs = np.random.default_rng(5).normal(0.0, 100.0, (200, FULL_WIDTH))
        assert np.all(np.abs(actor_forward(actor, obs)) < 1.0)

    def test_hand_built_network(self):
        """Test a hand-built 2-2-2-1 actor against direct evaluation"""
        w0 = np.array([[0.5, -0.2], [0.1, 0.3]])
        w1 = np.array([[1.0, 0.4], [-0.6, 0.2]])
        w2 = np.array([[0.7], [-1.1]])
        b0, b1, b2 = np.array([0.05, -0.05]), np.array([0.0, 0.1]), np.array([0.2])
        actor = MlpParams([w0, w1, w2], [b0, b1, b2], log_std=np.zeros(1), output_tanh=True)
        x = np.array([0.3, -0.8])
        expected = np.tanh(np.tanh(np.tanh(x @ w0 + b0) @ w1 + b1) @ w2 + b2)[0]
        assert actor_forward(actor, x)[0] == pytest.approx(expected, abs=1e-15)

    def test_one_dimensional_input_is_promoted(self):
        """Test a single observation gives a single output"""
        _, critic = make_networks(FULL_WIDTH)
        assert critic_forward(critic, np.zeros(FULL_WIDTH)).shape == (1,)

    def test_width_mismatch_raises(self):
        """Test an observation of the wrong width is rejected"""
        actor, critic = make_networks(RESTRICTED_WIDTH)
        with pytest.raises(ModelShapeError):
            actor_forward(actor, np.zeros((2, FULL_WIDTH)))
        with pytest.raises(ModelShapeError):
            critic_forward(critic, np.zeros((2, RESTRICTED_WIDTH)))

    def test_identity_activation_is_linear(self):
        """Test a bias-free network without tanh is linear in its input"""
        critic = init_mlp(FULL_WIDTH, np.random.default_rng(3), actor=False)
        critic.hidden_activation = "identity"
        x = np.random.default_rng(4).normal(size=(3, FULL_WIDTH))
        np.testing.assert_allclose(critic_forward(critic, 2.0 * x), 2.0 * critic_forward(critic, x), rtol=1e-10)

    def test_forward_is_deterministic(self):
        """Test same seed, same init, same output"""
        a = init_mlp(FULL_WIDTH, np.random.default_rng(11), actor=True)
        b = init_mlp(FULL_WIDTH, np.random.default_rng(11), actor=True)
        obs = np.linspace(-1, 1, FULL_WIDTH)
        assert actor_forward(a, obs)[0] == actor_forward(b, obs)[0]


class TestInitialization:
    """Test cases for orthogonal initialization"""

    def test_hidden_layers_are_orthogonal(self):
        """Test a square hidden layer is sqrt(2) times orthogonal"""
        w = orthogonal(256, 256, math.sqrt(2.0), np.random.default_rng(0))
        np.testing.assert_allclose(w.T @ w, 2.0 * np.eye(256), atol=1e-10)

    def test_wide_layer_has_orthonormal_rows(self):
        """Test an input layer wider than tall has orthogonal rows"""
        w = orthogonal(8, 256, 1.0, np.random.default_rng(0))
        np.testing.assert_allclose(w @ w.T, np.eye(8), atol=1e-10)

    def test_actor_starts_near_zero(self):
        """Test the small output gain keeps initial means small"""
        actor = init_mlp(FULL_WIDTH, np.random.default_rng(0), actor=True)
        obs = np.random.default_rng(1).normal(size=(100, FULL_WIDTH))
        assert np.all(np.abs(actor_forward(actor, obs)) < 0.2)
        assert actor.log_std[0] == pytest.approx(INITIAL_LOG_STD)
        assert actor.hidden_sizes == (256, 256)


class TestGaussianHead:
    """Test cases for sampling and log-probabilities"""

    def test_standard_normal_log_prob(self):
        """Test log N(0; 0, 1)"""
        assert gaussian_log_prob(0.0, 0.0, 0.0) == pytest.approx(-0.918939, abs=1e-6)

    def test_eval_mode_returns_mean(self):
        """Test deterministic evaluation uses the mean exactly"""
        mean = np.array([0.1, -0.4])
        action, _ = sample_action(mean, np.array([0.0]), 0.5, np.random.default_rng(0), mode="eval")
        np.testing.assert_array_equal(action, mean)

    def test_seeded_sampling_is_reproducible(self):
        """Test the same rng seed gives the same actions"""
        mean = np.zeros(5)
        a, lp_a = sample_action(mean, np.array([-1.0]), 0.5, np.random.default_rng(9))
        b, lp_b = sample_action(mean, np.array([-1.0]), 0.5, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(lp_a, lp_b)

    def test_zero_alpha_is_plain_gaussian(self):
        """Test without perturbation the log-prob is taken at the mean"""
        mean = np.array([0.2, -0.1, 0.0])
        action, log_prob = sample_action(mean, np.array([-0.5]), 0.0, np.random.default_rng(4))
        np.testing.assert_allclose(log_prob, gaussian_log_prob(action, mean, -0.5))

    def test_unknown_mode_rejected(self):
        """Test only train and eval modes exist"""
        with pytest.raises(ValueError):
            sample_action(np.zeros(1), np.zeros(1), 0.0, np.random.default_rng(0), mode="greedy")


class TestLoss:
    """Test cases for the clipped surrogate loss"""

    def test_unchanged_policy_loss_is_negative_mean_advantage(self):
        """Test ratio one gives -mean(A)"""
        actor, critic = make_networks(FULL_WIDTH)
        batch = make_batch(actor, critic, ratio_jitter=0.0)
        batch.old_log_probs = gaussian_log_prob(batch.actions, actor_forward(actor, batch.actor_obs) + batch.perturbation, actor.log_std[0])
        terms, _ = evaluate_loss(actor, critic, batch, LossDefinition())
        assert terms.policy == pytest.approx(-np.mean(batch.advantages), abs=1e-12)
        assert terms.approx_kl == pytest.approx(0.0, abs=1e-12)
        assert terms.clip_fraction == 0.0

    def test_clipped_ratio_flattens_gradient(self):
        """Test ratio 1.5 with positive advantage counts as 1.2 and gives no gradient"""
        actor, critic = make_networks(FULL_WIDTH)
        batch = make_batch(actor, critic)
        mean = actor_forward(actor, batch.actor_obs) + batch.perturbation
        batch.old_log_probs = gaussian_log_prob(batch.actions, mean, actor.log_std[0]) - math.log(1.5)
        batch.advantages = np.abs(batch.advantages) + 0.1
        loss = LossDefinition(value_weight=0.0, entropy_weight=0.0)
        terms, actor_grads, _ = backward(actor, critic, batch, loss)
        assert terms.policy == pytest.approx(-1.2 * np.mean(batch.advantages))
        assert terms.clip_fraction == 1.0
        for grad in actor_grads.arrays():
            np.testing.assert_array_equal(grad, np.zeros_like(grad))

    def test_constant_loss_gives_zero_gradients(self):
        """Test no advantage, value or entropy weight means no gradient"""
        actor, critic = make_networks(FULL_WIDTH)
        batch = make_batch(actor, critic)
        batch.advantages = np.zeros_like(batch.advantages)
        _, actor_grads, critic_grads = backward(actor, critic, batch, LossDefinition(value_weight=0.0, entropy_weight=0.0))
        for grad in actor_grads.arrays() + critic_grads.arrays():
            np.testing.assert_array_equal(grad, np.zeros_like(grad))

    def test_action_at_mean_gives_no_mean_gradient(self):
        """Test the log-prob is flat in the mean when the action equals it"""
        actor, critic = make_networks(FULL_WIDTH)
        batch = make_batch(actor, critic)
        batch.actions = actor_forward(actor, batch.actor_obs) + batch.perturbation
        _, actor_grads, _ = backward(actor, critic, batch, LossDefinition(value_weight=0.0, entropy_weight=0.0))
        for grad in actor_grads.weights + actor_grads.biases:
            np.testing.assert_allclose(grad, 0.0, atol=1e-15)

    def test_non_finite_loss_names_term(self):
        """Test a NaN return is reported as the value term"""
        actor, critic = make_networks(FULL_WIDTH)
        batch = make_batch(actor, critic)
        batch.returns[0] = np.nan
        with pytest.raises(TrainingFault) as exc:
            evaluate_loss(actor, critic, batch, LossDefinition())
        assert exc.value.term == "value"


class TestGradients:
    """Test cases for analytic gradients against finite differences"""

    @pytest.mark.parametrize("width", [FULL_WIDTH, RESTRICTED_WIDTH])
    def test_small_networks_every_parameter(self, width):
        """Test every parameter of small actor and critic networks"""
        actor, critic = make_networks(width)
        finite_difference_check(actor, critic, make_batch(actor, critic), LossDefinition())

    @pytest.mark.slow
    def test_full_size_networks_sampled(self):
        """Test sampled parameters of the 256-unit networks"""
        actor, critic = make_networks(FULL_WIDTH, hidden=(256, 256))
        actor.weights[-1] *= 0.2
        finite_difference_check(actor, critic, make_batch(actor, critic), LossDefinition(), max_entries=12)

    def test_gradient_step_reduces_loss(self):
        """Test a small step against the gradient lowers the loss"""
        actor, critic = make_networks(FULL_WIDTH)
        batch = make_batch(actor, critic)
        loss = LossDefinition()
        before, actor_grads, critic_grads = backward(actor, critic, batch, loss)
        for net, grads in ((actor, actor_grads), (critic, critic_grads)):
            for param, grad in zip(net.arrays(), grads.arrays()):
                param -= 1e-3 * grad
        after, _ = evaluate_loss(actor, critic, batch, loss)
        assert after.total < before.total


class TestOptimizer:
    """Test cases for Adam and gradient clipping"""

    def test_first_adam_step_is_learning_rate(self):
        """Test bias correction makes the first step about lr * sign(g)"""
        param = np.array([1.0, -1.0])
        Adam(lr=0.01).step([param], [np.array([2.0, -0.5])])
        np.testing.assert_allclose(param, [0.99, -0.99], rtol=1e-4)

    def test_state_round_trip(self):
        """Test a restored optimizer continues identically"""
        a, b = Adam(lr=0.01), Adam(lr=0.01)
        p_a, p_b = np.array([0.5, 0.5]), np.array([0.5, 0.5])
        a.step([p_a], [np.array([0.3, -0.1])])
        b.load_state_dict(a.state_dict())
        p_b[:] = p_a
        a.step([p_a], [np.array([0.2, 0.4])])
        b.step([p_b], [np.array([0.2, 0.4])])
        np.testing.assert_array_equal(p_a, p_b)
        assert b.t == 2

    def test_mismatched_lists_rejected(self):
        """Test parameter and gradient lists must align"""
        with pytest.raises(ValueError):
            Adam(lr=0.01).step([np.zeros(1)], [])

    def test_clip_scales_to_max_norm(self):
        """Test a norm-5 gradient is scaled to norm 1"""
        clipped, norm = clip_grad_norm([np.array([3.0]), np.array([4.0])], 1.0)
        assert norm == pytest.approx(5.0)
        assert math.hypot(clipped[0][0], clipped[1][0]) == pytest.approx(1.0, abs=1e-6)

    def test_clip_leaves_small_gradients(self):
        """Test gradients under the limit pass unchanged"""
        grads = [np.array([0.1, 0.2])]
        clipped, _ = clip_grad_norm(grads, 1.0)
        np.testing.assert_array_equal(clipped[0], grads[0])


class TestCheckpoint:
    """Test cases for checkpoint files"""

    @pytest.fixture
    def checkpoint(self):
        actor, critic = make_networks(RESTRICTED_WIDTH)
        optimizer = Adam(lr=1e-3)
        optimizer.step(actor.arrays() + critic.arrays(), [np.ones_like(a) for a in actor.arrays() + critic.arrays()])
        return Checkpoint(
            actor=actor,
            critic=critic,
            actor_input="restricted",
            global_step=4096,
            phase_index=2,
            seed_lineage=[3],
            config_hash="abc123",
            optimizer_state=optimizer.state_dict(),
        )

    def test_round_trip(self, tmp_path, checkpoint):
        """Test every array and metadata field survives save and load"""
        path = save_checkpoint(tmp_path / "ckpt.npz", checkpoint)
        loaded = load_checkpoint(path)
        for a, b in zip(checkpoint.actor.arrays() + checkpoint.critic.arrays(), loaded.actor.arrays() + loaded.critic.arrays()):
            np.testing.assert_array_equal(a, b)
        assert loaded.actor_input == "restricted"
        assert loaded.global_step == 4096
        assert loaded.phase_index == 2
        assert loaded.seed_lineage == [3]
        assert math.isinf(loaded.v_limit)
        assert loaded.optimizer_state["t"] == 1
        assert not (tmp_path / "ckpt.npz.tmp").exists()

    def test_loaded_actor_gives_same_actions(self, tmp_path, checkpoint):
        """Test a reloaded actor is behaviourally identical"""
        loaded = load_checkpoint(save_checkpoint(tmp_path / "ckpt.npz", checkpoint))
        obs = np.random.default_rng(0).normal(size=(10, RESTRICTED_WIDTH))
        np.testing.assert_array_equal(actor_forward(loaded.actor, obs), actor_forward(checkpoint.actor, obs))

    def test_finite_limit_round_trip(self, tmp_path, checkpoint):
        """Test a finite velocity limit is stored as a number"""
        checkpoint.v_limit = 0.3
        assert load_checkpoint(save_checkpoint(tmp_path / "c.npz", checkpoint)).v_limit == 0.3

    def test_missing_file(self, tmp_path):
        """Test a missing checkpoint raises CheckpointError"""
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "absent.npz")

    def test_garbage_file(self, tmp_path):
        """Test a non-archive file raises CheckpointError"""
        path = tmp_path / "junk.npz"
        path.write_text("not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_wrong_format(self, tmp_path, checkpoint):
        """Test a foreign metadata format is rejected"""
        path = save_checkpoint(tmp_path / "ckpt.npz", checkpoint)
        with np.load(path) as archive:
            arrays = {name: archive[name] for name in archive.files}
        meta = json.loads(str(arrays["__metadata__"]))
        meta["format"] = "something-else"
        arrays["__metadata__"] = np.array(json.dumps(meta))
        np.savez(path, **arrays)
        with pytest.raises(CheckpointError, match="not a version-1"):
            load_checkpoint(path)

    def test_wrong_shape(self, tmp_path, checkpoint):
        """Test a mis-shaped array is rejected"""
        path = save_checkpoint(tmp_path / "ckpt.npz", checkpoint)
        with np.load(path) as archive:
            arrays = {name: archive[name] for name in archive.files}
        arrays["critic.weight1"] = np.zeros((3, 3))
        np.savez(path, **arrays)
        with pytest.raises(CheckpointError, match="critic.weight1"):
            load_checkpoint(path)

    def test_non_finite_parameters(self, tmp_path, checkpoint):
        """Test NaN parameters are rejected"""
        checkpoint.actor.biases[0][0] = np.nan
        path = save_checkpoint(tmp_path / "ckpt.npz", checkpoint)
        with pytest.raises(CheckpointError, match="non-finite"):
            load_checkpoint(path)
