import json
import os
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import stats

from helpers import SMALL, desk_setup
from shapectl.neural import numerical_gradient
from shapectl.obs import N_MASKABLE, OBS_DIM, PRIV_DIM, MaskSpec, sample_mask
from shapectl.surrogate.env import DESK_ENV, EnvFault, SurrogateEnv
from shapectl.tqc import (
    DELTA_P, Batch, ReplayBuffer, TQCAgent, TQCConfig, act, actor_loss_and_grads, alpha_gradient,
    alpha_update, critic_loss_and_grads, load_checkpoint, polyak_update, quantile_huber_loss,
    save_checkpoint, train, truncate_atoms, truncated_target,
)

DATA = os.path.join(os.path.dirname(__file__), "data")


def brute_quantile_huber(pred, target, kappa=1.0):
    """Explicit double loop over quantile/atom pairs."""
    m = len(pred)
    total = 0.0
    for i, q in enumerate(pred):
        tau = (2 * (i + 1) - 1) / (2 * m)
        for t in target:
            u = t - q
            h = 0.5 * u * u if abs(u) <= kappa else kappa * (abs(u) - 0.5 * kappa)
            total += abs(tau - (1.0 if u < 0 else 0.0)) * h / kappa
    return total / (m * len(target))


@pytest.fixture(scope="module")
def desk():
    return desk_setup()


def _batch(rng, agent, B=6):
    cdim = agent.critic_dim
    return Batch(rng.normal(size=(B, OBS_DIM)), rng.normal(size=(B, OBS_DIM)), rng.normal(size=(B, cdim)),
                 rng.normal(size=(B, cdim)), rng.uniform(-0.9, 0.9, (B, agent.n_act)), rng.normal(size=B),
                 (rng.random(B) < 0.3).astype(float), rng.normal(size=(B, 16)))


# --- config -------------------------------------------------------------------------

def test_default_config_keeps_57_atoms():
    cfg = TQCConfig()
    assert cfg.n_keep == 57
    assert (cfg.n_critics, cfg.n_quantiles, cfg.top_quantiles_to_drop) == (3, 25, 6)
    assert cfg.gamma == 0.97 and cfg.tau == 0.005 and cfg.batch_size == 1024 and cfg.warmup == 10_000
    assert cfg.lr == 3e-5 and cfg.freeze_threshold == 150_000 and cfg.dropout_p == 0.3


def test_config_validation():
    with pytest.raises(ValueError):
        TQCConfig(top_quantiles_to_drop=25)
    with pytest.raises(ValueError):
        TQCConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TQCConfig(algorithm="ppo")
    cfg = TQCConfig(no_aux=True)
    assert cfg.effective_aux_weight == 0.0
    assert TQCConfig.from_dict(cfg.to_dict()) == cfg


def test_sac_stub_not_implemented():
    with pytest.raises(NotImplementedError, match="not implemented"):
        TQCAgent(TQCConfig(algorithm="sac"), 6)


# --- quantile Huber ------------------------------------------------------------------

def test_quantile_huber_single_atom_zero():
    assert quantile_huber_loss([0.7], [0.7]) == 0.0


def test_quantile_huber_two_quantile_hand_case():
    # tau = 1/4, 3/4; pairs (0,0)->0, (0,1)->1/4*1/2, (1,0)->1/4*1/2, (1,1)->0; mean over 4 pairs
    assert abs(quantile_huber_loss([0.0, 1.0], [0.0, 1.0]) - 0.0625) < 1e-12


@given(hnp.arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)),
       hnp.arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)),
       st.floats(0.1, 3.0))
def test_quantile_huber_matches_brute_force_and_nonnegative(pred, target, kappa):
    got = quantile_huber_loss(pred, target, kappa)
    assert got >= 0.0
    assert got == pytest.approx(brute_quantile_huber(pred, target, kappa), rel=1e-12, abs=1e-15)


def test_quantile_huber_gradient_finite_differences(rng):
    pred, target = rng.normal(size=(4, 7)), rng.normal(size=(4, 11)) * 2
    _, g = quantile_huber_loss(pred, target, return_grad=True)
    num = numerical_gradient(lambda: quantile_huber_loss(pred, target), pred, h=1e-6)
    np.testing.assert_allclose(g, num, rtol=1e-4, atol=1e-10)


# --- truncation -----------------------------------------------------------------------

def test_truncation_hand_example():
    q = np.array([[[6.0, 1.0, 4.0], [2.0, 5.0, 3.0]]])
    kept = truncate_atoms(q, n_keep=2 * (3 - 1))
    np.testing.assert_array_equal(kept, [[1.0, 2.0, 3.0, 4.0]])


def test_truncation_matches_sort_and_drop_fuzzed():
    rng = np.random.default_rng(7)
    q = rng.normal(size=(10_000, 3, 25))
    q[::7] = np.round(q[::7])  # plenty of ties
    kept = truncate_atoms(q, 57)
    for row, k in zip(q[::37], kept[::37]):
        assert list(k) == sorted(row.ravel().tolist())[:57]
    ref = np.array([sorted(r.ravel().tolist())[:57] for r in q])
    assert np.array_equal(kept, ref)


def test_terminal_target_equals_reward(rng):
    q = rng.normal(size=(5, 3, 25))
    y = truncated_target(q, np.arange(5.0), np.ones(5), rng.normal(size=5), 0.2, 0.97, 57)
    assert y.shape == (5, 57)
    assert np.all(y == np.arange(5.0)[:, None])


def test_entropy_term_applied_after_truncation(rng):
    q = rng.normal(size=(2, 3, 25))
    logp = np.array([0.5, -1.0])
    y = truncated_target(q, np.zeros(2), np.zeros(2), logp, 0.3, 0.9, 57)
    kept = truncate_atoms(q, 57)
    np.testing.assert_allclose(y, 0.9 * (kept - 0.3 * logp[:, None]), rtol=1e-15)


# --- Polyak ----------------------------------------------------------------------------

def test_polyak_extremes_and_hand_value(rng):
    agent = TQCAgent(TQCConfig(**SMALL), 2, seed=0)
    for c in agent.critics:
        for t in c.tensors():
            t += 1.0
    before = [t.copy() for c in agent.target_critics for t in c.tensors()]
    polyak_update(agent.target_critics, agent.critics, 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(before, [t for c in agent.target_critics for t in c.tensors()]))
    polyak_update(agent.target_critics, agent.critics, 1.0)
    for tc, c in zip(agent.target_critics, agent.critics):
        assert all(np.array_equal(a, b) for a, b in zip(tc.tensors(), c.tensors()))
    from shapectl.neural import MLP
    t, s = MLP((1, 1), [np.array([[2.0]])], [np.array([0.0])]), MLP((1, 1), [np.array([[4.0]])], [np.array([1.0])])
    polyak_update([t], [s], 0.005)
    assert t.weights[0][0, 0] == pytest.approx(2.01, abs=1e-15)
    assert t.biases[0][0] == pytest.approx(0.005, abs=1e-15)


# --- replay buffer ------------------------------------------------------------------------

def _fill(buf, n, start=0):
    mask = MaskSpec.full()
    for i in range(start, start + n):
        buf.add(np.full(OBS_DIM, i), np.zeros(buf.action.shape[1]), float(i), np.full(OBS_DIM, i + 1), False,
                np.full(PRIV_DIM, i), np.full(PRIV_DIM, i + 1), mask)


def test_replay_fifo_overwrite():
    buf = ReplayBuffer(5, 2)
    _fill(buf, 7)
    assert len(buf) == 5
    assert sorted(buf.reward.tolist()) == [2.0, 3.0, 4.0, 5.0, 6.0]
    assert buf.reward[0] == 5.0 and buf.reward[1] == 6.0


def test_replay_uniform_sampling():
    buf = ReplayBuffer(50, 1)
    _fill(buf, 50)
    idx = buf.sample_indices(100_000, np.random.default_rng(0))
    counts = np.bincount(idx, minlength=50)
    _, pval = stats.chisquare(counts)
    assert pval > 1e-3


def test_replay_empty_sample_raises():
    with pytest.raises(ValueError):
        ReplayBuffer(3, 1).sample_indices(2, np.random.default_rng(0))


def test_batch_gains_follow_stored_mask():
    buf = ReplayBuffer(4, 1)
    rng = np.random.default_rng(1)
    m = sample_mask(0.5, rng)
    buf.add(np.ones(OBS_DIM), np.zeros(1), 0.0, np.ones(OBS_DIM), False, np.zeros(PRIV_DIM), np.zeros(PRIV_DIM), m)
    g = buf.gains(np.array([0]))[0]
    np.testing.assert_array_equal(g[:N_MASKABLE], m.maskable * 2.0)
    assert np.all(g[N_MASKABLE:] == 1.0)


# --- losses and gradients -------------------------------------------------------------------

def test_critic_loss_finite_differences(rng):
    agent = TQCAgent(TQCConfig(**SMALL), 2, seed=1)
    batch = _batch(rng, agent)
    next_sample, _, _ = agent.policy(batch.next_obs, rng)
    _, grads = critic_loss_and_grads(agent, batch, next_sample)
    names = agent.critic_names()
    for k in (0, 1, 5, 9, 12, 17):
        t = agent.critic_tensors()[k]
        num = numerical_gradient(lambda: critic_loss_and_grads(agent, batch, next_sample)[0], t, h=1e-6)
        np.testing.assert_allclose(grads[k], num, rtol=1e-4, atol=1e-9, err_msg=names[k])


@pytest.mark.parametrize("no_aux", [False, True])
def test_total_actor_loss_finite_differences(no_aux):
    rng = np.random.default_rng(2)
    agent = TQCAgent(TQCConfig(**SMALL, no_aux=no_aux), 2, seed=2)
    agent.log_alpha[0] = np.log(0.3)
    batch = _batch(rng, agent)
    eps = rng.standard_normal((6, 2))
    w = agent.cfg.effective_aux_weight

    def total():
        a, x, _, _ = actor_loss_and_grads(agent, batch, eps)
        return a + w * x

    _, _, grads, _ = actor_loss_and_grads(agent, batch, eps)
    for k, (name, t) in enumerate(zip(agent.actor_names(), agent.actor_tensors())):
        num = numerical_gradient(total, t, h=1e-6)
        np.testing.assert_allclose(grads[k], num, rtol=1e-4, atol=1e-9, err_msg=name)


def test_perfect_aux_prediction_matches_no_aux_gradient(rng):
    cfg = TQCConfig(**SMALL)
    agent = TQCAgent(cfg, 2, seed=3)
    plain = TQCAgent(TQCConfig(**SMALL, no_aux=True), 2, seed=3)
    batch = _batch(rng, agent)
    target = rng.normal(size=16)
    batch.delta_p[:] = target
    agent.aux_head.weights[0][:] = 0.0
    agent.aux_head.biases[0][:] = target
    eps = rng.standard_normal((6, 2))
    a1, x1, g1, _ = actor_loss_and_grads(agent, batch, eps)
    a2, x2, g2, _ = actor_loss_and_grads(plain, batch, eps)
    assert x1 == 0.0 and a1 == a2
    n_actor = len(agent.actor.tensors())
    assert all(np.array_equal(a, b) for a, b in zip(g1[:n_actor], g2[:n_actor]))


def test_alpha_stationary_at_target():
    assert alpha_gradient(np.log(0.2), np.full(10, 6.0), -6.0) == 0.0


def test_alpha_direction():
    agent = TQCAgent(TQCConfig(**SMALL), 2, seed=0)
    a0 = agent.alpha
    # entropy -mean(logp) = -3 is below the target of -2: temperature must rise
    alpha_update(agent, np.full(8, 3.0))
    assert agent.alpha > a0
    agent = TQCAgent(TQCConfig(**SMALL), 2, seed=0)
    alpha_update(agent, np.full(8, -1.0))
    assert agent.alpha < a0


def test_alpha_hand_update():
    agent = TQCAgent(TQCConfig(**SMALL, init_alpha=0.5), 2, seed=0)
    logp = np.array([1.0, 2.0, 0.0, 1.0])  # mean 1, target -2 -> mean(logp + target) = -1
    g = alpha_gradient(np.log(0.5), logp, -2.0)
    assert g == pytest.approx(0.5, rel=1e-15)
    alpha_update(agent, logp)
    # first Adam step moves by lr * g / (|g| + eps) against the gradient
    expected = np.log(0.5) - 1e-3 * 0.5 / (0.5 + 1e-8)
    assert agent.log_alpha[0] == pytest.approx(expected, rel=1e-12)


# --- actor / deployment --------------------------------------------------------------------

def test_actor_ignores_privileged_blocks():
    agent = TQCAgent(TQCConfig(**SMALL), 2, seed=4)
    buf = ReplayBuffer(2, 2)
    rng = np.random.default_rng(0)
    obs = rng.normal(size=OBS_DIM)
    mask = MaskSpec.full()
    buf.add(obs, np.zeros(2), 0.0, obs, False, rng.normal(size=PRIV_DIM), rng.normal(size=PRIV_DIM), mask)
    buf.add(obs, np.zeros(2), 0.0, obs, False, rng.normal(size=PRIV_DIM), rng.normal(size=PRIV_DIM), mask)
    b = agent.make_batch(buf, np.array([0, 1]))
    assert np.array_equal(b.obs[0], b.obs[1])
    assert not np.array_equal(b.critic[0], b.critic[1])
    s, _, _ = agent.policy(b.obs, deterministic=True)
    assert np.array_equal(s.action[0], s.action[1])


def test_act_deterministic_and_mask_blind(rng):
    agent = TQCAgent(TQCConfig(**SMALL), 2, seed=5)
    mask = sample_mask(0.5, rng)
    obs = rng.normal(size=OBS_DIM)
    a1 = act(obs, agent, mask, deterministic=True)
    assert np.array_equal(a1, act(obs, agent, mask, deterministic=True))
    other = obs.copy()
    other[:N_MASKABLE][~mask.maskable] += 123.0
    assert np.array_equal(a1, act(other, agent, mask, deterministic=True))
    other[:N_MASKABLE][np.flatnonzero(mask.maskable)[0]] += 1.0
    assert not np.array_equal(a1, act(other, agent, mask, deterministic=True))


def test_no_privileged_critic_sees_actor_input(rng):
    agent = TQCAgent(TQCConfig(**SMALL, no_privileged=True), 2, seed=0)
    assert agent.critics[0].n_in == OBS_DIM + 2
    buf = ReplayBuffer(3, 2)
    _fill(buf, 3)
    b = agent.make_batch(buf, np.array([0, 2]))
    assert np.array_equal(b.critic, b.obs)


# --- training loop --------------------------------------------------------------------------

def test_warmup_then_one_update_per_step(desk):
    env, ds = desk
    agent = TQCAgent(TQCConfig(**SMALL), env.cfg.n_act, seed=0)
    train(env, ds, agent, steps=80)
    assert agent.first_update_step == 50
    assert agent.updates == 31
    assert agent.env_steps == 80


def test_training_deterministic(desk, tmp_path):
    env, ds = desk
    cfg = TQCConfig(**SMALL)
    env_short = SurrogateEnv(replace(DESK_ENV, episode_len=40, resample_period=20))
    for k in range(2):
        agent = TQCAgent(cfg, env.cfg.n_act, seed=11)
        train(env_short, ds, agent, steps=150, metrics_path=tmp_path / f"m{k}.csv")
        save_checkpoint(agent, tmp_path / f"c{k}")
    assert (tmp_path / "m0.csv").read_bytes() == (tmp_path / "m1.csv").read_bytes()
    assert (tmp_path / "c0" / "checkpoint.bin").read_bytes() == (tmp_path / "c1" / "checkpoint.bin").read_bytes()
    assert (tmp_path / "c0" / "checkpoint.json").read_bytes() == (tmp_path / "c1" / "checkpoint.json").read_bytes()
    header = (tmp_path / "m0.csv").read_text().splitlines()[0]
    assert header == "episode,steps,mean_reward,mean_d_shape_m,mean_d_xpt_m,eplen,mask_fraction"


def test_checkpoint_roundtrip_bit_identical(desk, tmp_path):
    env, ds = desk
    agent = TQCAgent(TQCConfig(**SMALL), env.cfg.n_act, seed=3)
    train(env, ds, agent, steps=70)
    save_checkpoint(agent, tmp_path / "a")
    back = load_checkpoint(tmp_path / "a")
    save_checkpoint(back, tmp_path / "b")
    for f in ("checkpoint.json", "checkpoint.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert back.env_steps == 70 and back.first_update_step == 50
    obs = np.random.default_rng(0).normal(size=OBS_DIM)
    assert np.array_equal(act(obs, agent, MaskSpec.full()), act(obs, back, MaskSpec.full()))


def test_untrained_checkpoint_roundtrip(tmp_path):
    agent = TQCAgent(TQCConfig(**SMALL), 6, seed=0)
    save_checkpoint(agent, tmp_path / "z")
    back = load_checkpoint(tmp_path / "z")
    save_checkpoint(back, tmp_path / "z2")
    assert (tmp_path / "z" / "checkpoint.bin").read_bytes() == (tmp_path / "z2" / "checkpoint.bin").read_bytes()


def test_checkpoint_detects_corruption(tmp_path):
    save_checkpoint(TQCAgent(TQCConfig(**SMALL), 2, seed=0), tmp_path / "x")
    blob = bytearray((tmp_path / "x" / "checkpoint.bin").read_bytes())
    blob[10] ^= 1
    (tmp_path / "x" / "checkpoint.bin").write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="digest"):
        load_checkpoint(tmp_path / "x")


def test_resume_continues_counters(desk, tmp_path):
    env, ds = desk
    agent = TQCAgent(TQCConfig(**SMALL, total_steps=120), env.cfg.n_act, seed=0)
    train(env, ds, agent, steps=60)
    save_checkpoint(agent, tmp_path / "r")
    back = load_checkpoint(tmp_path / "r")
    train(env, ds, back)
    assert back.env_steps == 120
    assert back.updates == agent.updates + 60


def test_fault_writes_checkpoint(desk, tmp_path, monkeypatch):
    env, ds = desk
    agent = TQCAgent(TQCConfig(**SMALL), env.cfg.n_act, seed=0)
    calls = {"n": 0}
    real = env.step

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 30:
            raise EnvFault("boom", {"step_index": 29})
        return real(*a, **k)

    monkeypatch.setattr(env, "step", flaky)
    with pytest.raises(EnvFault):
        train(env, ds, agent, steps=100, fault_checkpoint=tmp_path / "fault")
    man = json.loads((tmp_path / "fault" / "checkpoint.json").read_text())
    assert man["counters"]["env_steps"] == 29


def test_golden_action():
    agent = load_checkpoint(os.path.join(DATA, "golden_agent"))
    with open(os.path.join(DATA, "golden_action.json")) as f:
        g = json.load(f)
    mask = MaskSpec.from_dict(g["mask"])
    a = act(np.array(g["obs"]), agent, mask, deterministic=True)
    np.testing.assert_allclose(a, g["action"], rtol=0, atol=1e-12)


def make_golden():
    """Regenerate the recorded agent and action (run this file as a script)."""
    env, ds = desk_setup()
    agent = TQCAgent(TQCConfig(**SMALL), env.cfg.n_act, seed=2024)
    train(env, ds, agent, steps=120)
    save_checkpoint(agent, os.path.join(DATA, "golden_agent"))
    rng = np.random.default_rng(99)
    _, obs, _ = env.reset(ds, rng)
    mask = sample_mask(0.3, rng)
    a = act(obs.vector(), agent, mask, deterministic=True)
    with open(os.path.join(DATA, "golden_action.json"), "w") as f:
        json.dump({"obs": obs.vector().tolist(), "mask": mask.to_dict(), "action": a.tolist()}, f)


if __name__ == "__main__":
    make_golden()
