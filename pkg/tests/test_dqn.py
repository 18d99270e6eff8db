import numpy as np
import pytest

from selfplay_ipd.dqn import (
    DqnConfig,
    DqnRunLog,
    MlpQNet,
    ReplayBuffer,
    batch_loss,
    batch_loss_and_grads,
    forward,
    selfplay_train,
    train_step,
)
from selfplay_ipd.game import State
from selfplay_ipd.policy import RandomStream


def test_zero_network_outputs_zero_everywhere():
    net = MlpQNet.zeros(32)
    for s in State:
        assert forward(net, s) == (0.0, 0.0)
    assert net.n_parameters() == 4 * 32 + 32 + 2 * 32 + 2


def test_single_active_path_arithmetic():
    net = MlpQNet.zeros(8)
    net.w1[0, int(State.DD)] = 2.0   # hidden unit 0 reads the DD one-hot
    net.w2[0, 0] = 3.0               # and feeds the defect output
    q_c, q_d = forward(net, State.DD)
    assert (q_c, q_d) == (0.0, 6.0)
    for s in (State.CC, State.CD, State.DC):
        assert forward(net, s) == (0.0, 0.0)
    # negative preactivations are cut by the rectifier
    net.w1[0, int(State.DD)] = -2.0
    assert forward(net, State.DD) == (0.0, 0.0)


def _finite_difference_max_rel_err(net, x, a, y, h=1e-5):
    _, grads = batch_loss_and_grads(net, x, a, y)
    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        for i in range(p.size):
            keep = p.flat[i]
            p.flat[i] = keep + h
            up = batch_loss(net, x, a, y)
            p.flat[i] = keep - h
            down = batch_loss(net, x, a, y)
            p.flat[i] = keep
            fd = (up - down) / (2.0 * h)
            # the absolute floor absorbs cancellation noise (~eps/h) on
            # entries whose true gradient is zero
            scale = max(abs(fd), abs(g.flat[i]), 1e-6)
            worst = max(worst, abs(fd - g.flat[i]) / scale)
    return worst


def _kink_free_draw(rng, hidden=6, n=5, margin=1e-3):
    """Draw net/batch/targets with every ReLU preactivation and Huber error
    away from its kink, where central differences are valid."""
    while True:
        net = MlpQNet.init(hidden, rng)
        x = np.eye(4)[np.asarray(rng.integers(0, 4, size=n))]
        a = np.asarray(rng.integers(0, 2, size=n), dtype=np.int64)
        y = rng.normals(n, scale=4.0)
        z1 = x @ net.w1.T + net.b1
        pred = net.batch_outputs(x)[np.arange(n), a]
        err = pred - y
        if np.min(np.abs(z1)) > margin and np.min(np.abs(np.abs(err) - 1.0)) > margin:
            return net, x, a, y


def test_backprop_matches_finite_differences_on_20_draws():
    rng = RandomStream(7)
    for draw in range(20):
        net, x, a, y = _kink_free_draw(rng)
        assert _finite_difference_max_rel_err(net, x, a, y) <= 1e-4


def test_buffer_overwrites_oldest_at_capacity():
    buf = ReplayBuffer(4)
    for i in range(6):
        buf.push(i % 4, i % 2, float(i), (i + 1) % 4)
    assert buf.size == 4
    assert sorted(buf.rewards.tolist()) == [2.0, 3.0, 4.0, 5.0]


def test_buffer_sampling_is_uniform():
    buf = ReplayBuffer(10)
    for i in range(10):
        buf.push(i % 4, i % 2, float(i), 0)
    rng = RandomStream(11)
    n = 100_000
    _, _, rewards, _ = buf.sample(n, rng)
    counts = np.bincount(rewards.astype(int), minlength=10)
    expected = n / 10.0
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 < 27.88  # 9 dof at the 0.1% level


def test_buffer_rejects_empty_sampling():
    with pytest.raises(ValueError, match="empty"):
        ReplayBuffer(4).sample(2, RandomStream(0))


def test_full_tau_copies_the_network():
    cfg = DqnConfig(batch_size=4, tau=1.0, lr=0.05)
    rng = RandomStream(3)
    net = MlpQNet.init(8, rng)
    target = MlpQNet.zeros(8)
    buf = ReplayBuffer(16)
    buf.push(0, 0, 2.0, 0)
    train_step(net, target, buf, cfg, rng)
    for tp, p in zip(target.parameters(), net.parameters()):
        assert np.allclose(tp, p)


def test_zero_learning_rate_freezes_parameters():
    cfg = DqnConfig(batch_size=4, lr=0.0)
    rng = RandomStream(4)
    net = MlpQNet.init(8, rng)
    before = [p.copy() for p in net.parameters()]
    buf = ReplayBuffer(16)
    buf.push(0, 0, 2.0, 0)
    train_step(net, net.copy(), buf, cfg, rng)
    for p, b in zip(net.parameters(), before):
        assert np.array_equal(p, b)


def test_degenerate_buffer_converges_to_scalar_fixed_point():
    # only (DD, D, r_dd, DD) in the buffer: the defect output must approach
    # r_dd + gamma * max(outputs) = r_dd / (1 - gamma) = 10 at gamma = 0.8,
    # matching a scalar fixed-point iteration (cooperate output stays at 0)
    cfg = DqnConfig(batch_size=8, lr=0.5, tau=1.0, gamma=0.8)
    rng = RandomStream(5)
    net = MlpQNet.init(16, rng)
    target = net.copy()
    buf = ReplayBuffer(4)
    buf.push(int(State.DD), 0, 2.0, int(State.DD))
    for _ in range(6000):
        train_step(net, target, buf, cfg, rng)
    q_c, q_d = forward(net, State.DD)
    assert q_d == pytest.approx(10.0, abs=0.1)
    assert max(q_c, q_d) == q_d


def test_config_validation():
    with pytest.raises(ValueError, match="eps"):
        DqnConfig(eps_start=0.1, eps_end=0.3)
    with pytest.raises(ValueError, match="tau"):
        DqnConfig(tau=0.0)
    assert DqnConfig(paper_scale=True).batch_size == 16384


def test_epsilon_schedule():
    cfg = DqnConfig()
    assert cfg.epsilon_at(0) == 0.5
    assert cfg.epsilon_at(599) == 0.5
    assert cfg.epsilon_at(600 + 300) == pytest.approx(0.255, abs=1e-12)
    assert cfg.epsilon_at(600 + 600) == pytest.approx(0.01, abs=1e-12)
    assert cfg.epsilon_at(5000) == pytest.approx(0.01, abs=1e-12)


def test_training_log_shapes_and_determinism():
    cfg = DqnConfig(num_iters=800, pretrain_iters=200, eps_decay_steps=200,
                    seed=12)
    log1 = selfplay_train(cfg, run_index=0)
    log2 = selfplay_train(cfg, run_index=0)
    assert isinstance(log1, DqnRunLog)
    assert log1.p_c.shape == (800, 4)
    assert log1.epsilon.shape == (800,)
    assert log1.pretrain_policy is not None
    assert np.array_equal(log1.p_c, log2.p_c)
    assert np.array_equal(log1.loss, log2.loss)


def test_myopic_agent_keeps_defecting():
    # with no future value the stage game is dominance-solvable: defect.
    # sustained exploration keeps every action sampled so the replay buffer
    # cannot pin stale optimistic values on the rarely-played action
    cfg = DqnConfig(gamma=1e-9, eps_start=0.4, eps_end=0.4, eps_decay_steps=1,
                    num_iters=8000, seed=8)
    log = selfplay_train(cfg, run_index=0)
    assert log.final_policy == "always_defect"
    final = log.final_p_c()
    assert all(v <= 0.4 for v in final.values())


def test_persistent_uniform_exploration_learns_always_defect():
    # epsilon pinned at 1/2 throughout: the unique fixed-point policy under
    # uniform play is always-defect
    cfg = DqnConfig(eps_start=0.5, eps_end=0.5, eps_decay_steps=1,
                    pretrain_iters=0, num_iters=5000, seed=8)
    log = selfplay_train(cfg, run_index=0)
    assert log.final_policy == "always_defect"
