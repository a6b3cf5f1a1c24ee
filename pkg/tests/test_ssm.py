"""Core model tests: each operation against an independent oracle, plus the
stability / causality / selectivity invariants."""

import mpmath
import numpy as np
import pytest
import scipy.linalg


from ibssm import ssm
from ibssm.exceptions import ConfigurationError, StabilityError
from ibssm.ssm import SsmConfig


def small_config(**kw):
    base = dict(input_channels=2, lookback=8, horizon=2, embed_dim=3, state_dim=3, bottleneck_dim=3)
    base.update(kw)
    return SsmConfig(**base)


# -- embed ---------------------------------------------------------------------


def test_embed_identity_and_constant():
    params = {"W_e": np.eye(2), "b_e": np.zeros(2)}
    assert np.array_equal(ssm.embed(np.array([[1.0, 2.0]]), params), [[1.0, 2.0]])

    params = {"W_e": np.zeros((2, 2)), "b_e": np.array([3.0, 3.0])}
    out = ssm.embed(np.random.default_rng(0).normal(size=(5, 2)), params)
    assert np.array_equal(out, np.full((5, 2), 3.0))


def test_embed_per_step_locality():
    rng = np.random.default_rng(1)
    params = {"W_e": rng.normal(size=(4, 3)), "b_e": rng.normal(size=4)}
    u1 = rng.normal(size=(6, 3))
    u2 = u1.copy()
    u2[3] += 1.0
    x1, x2 = ssm.embed(u1, params), ssm.embed(u2, params)
    diff = np.abs(x1 - x2).sum(axis=1)
    assert diff[3] > 0 and np.all(diff[[0, 1, 2, 4, 5]] == 0)


def test_embed_dimension_mismatch():
    params = {"W_e": np.eye(2), "b_e": np.zeros(2)}
    with pytest.raises(ConfigurationError):
        ssm.embed(np.ones((3, 5)), params)


# -- gate ----------------------------------------------------------------------


def gate_params(e_dim, d_dim, rng=None):
    if rng is None:
        return {
            "W_delta": np.zeros((e_dim, e_dim)),
            "b_delta": np.zeros(e_dim),
            "W_B": np.zeros((d_dim, e_dim)),
            "W_C": np.zeros((d_dim, e_dim)),
        }
    return {
        "W_delta": rng.normal(size=(e_dim, e_dim)),
        "b_delta": rng.normal(size=e_dim),
        "W_B": rng.normal(size=(d_dim, e_dim)),
        "W_C": rng.normal(size=(d_dim, e_dim)),
    }


def test_gate_softplus_at_zero():
    out = ssm.gate(np.zeros(3), gate_params(3, 2))
    assert np.allclose(out.delta, np.log(2.0), atol=1e-15)
    assert np.array_equal(out.b_in, np.zeros(2))
    assert np.array_equal(out.c_out, np.zeros(2))


def test_gate_large_negative_bias_still_positive():
    p = gate_params(1, 1)
    p["b_delta"] = np.array([-20.0])
    out = ssm.gate(np.zeros(1), p)
    with mpmath.workdps(50):  # high-precision softplus oracle
        oracle = float(mpmath.log(1 + mpmath.exp(-20)))
    assert out.delta[0] > 0.0
    assert abs(out.delta[0] - oracle) < 1e-22


# -- discretize ------------------------------------------------------------------


def test_discretize_closed_form_scalar():
    a_bar, b_bar = ssm.discretize_zoh(np.array([-1.0]), np.array([1.0]), np.log(2.0))
    assert abs(a_bar[0] - 0.5) < 1e-15
    assert abs(b_bar[0] - 0.5) < 1e-15


def test_discretize_small_delta_limit():
    a = np.array([-1.3])
    b = np.array([0.7])
    for delta in (1e-6, 1e-9, 1e-12):
        a_bar, b_bar = ssm.discretize_zoh(a, b, delta)
        assert abs(a_bar[0] - 1.0) < 2e-6
        assert abs(b_bar[0]) < 1e-5
        assert abs(b_bar[0] / delta - b[0]) < 1e-5


def test_discretize_derived_value():
    a_bar, b_bar = ssm.discretize_zoh(np.array([-2.0]), np.array([1.0]), 1.0)
    # extended-precision oracle: exp(-2), (exp(-2) - 1) / (-2)
    exp_m2 = mpmath.exp(-2)
    assert abs(a_bar[0] - float(exp_m2)) < 1e-16
    assert abs(b_bar[0] - float((exp_m2 - 1) / -2)) < 1e-16


def test_discretize_rejects_unstable():
    with pytest.raises(StabilityError):
        ssm.discretize_zoh(np.array([0.0]), np.array([1.0]), 1.0)
    with pytest.raises(StabilityError):
        ssm.discretize_zoh(np.array([-1.0, 0.5]), np.ones(2), 1.0)
    with pytest.raises(StabilityError):
        ssm.discretize_zoh(np.array([-1.0]), np.ones(1), 0.0)


def test_discretize_step_dynamics_type():
    rng = np.random.default_rng(8)
    g = ssm.GateOutput(delta=np.array([0.5, 2.0]), b_in=rng.normal(size=3), c_out=np.zeros(3))
    dyn = ssm.discretize_step(g, np.array([-0.5, -1.0, -2.0]))
    assert dyn.a_bar.shape == (2, 3) and dyn.b_bar.shape == (2, 3)
    assert np.all(dyn.a_bar > 0.0) and np.all(dyn.a_bar < 1.0)
    with pytest.raises(StabilityError):
        ssm.DiscreteDynamics(a_bar=np.array([[1.5]]), b_bar=np.array([[0.0]]))
    with pytest.raises(StabilityError):
        ssm.DiscreteDynamics(a_bar=np.array([[np.nan]]), b_bar=np.array([[0.0]]))


def test_zoh_matches_matrix_exponential_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        d = rng.integers(1, 5)
        a = -np.exp(rng.uniform(-3, 2, size=d))
        b_in = rng.normal(size=d)
        delta = float(np.exp(rng.uniform(-5, 2)))
        a_bar, b_bar = ssm.discretize_zoh(a, b_in, delta)
        exp_m = scipy.linalg.expm(delta * np.diag(a))
        b_m = np.linalg.solve(np.diag(a), (exp_m - np.eye(d))) @ b_in
        assert np.all(a_bar > 0) and np.all(a_bar < 1)
        assert np.max(np.abs(a_bar - np.diag(exp_m))) < 1e-12
        assert np.max(np.abs(b_bar - b_m)) < 1e-12 * max(1.0, np.max(np.abs(b_m)))


# -- scan ------------------------------------------------------------------------


def test_scan_core_geometric_decay():
    t_len = 3
    a_bar = np.full((t_len, 1, 1), 0.5)
    b_bar = np.ones((t_len, 1, 1))
    c_out = np.ones((t_len, 1))
    x = np.array([[1.0], [0.0], [0.0]])
    states, o = ssm._scan_core(a_bar, b_bar, c_out, np.zeros(1), x)
    assert np.allclose(states.reshape(-1), [1.0, 0.5, 0.25])
    assert np.allclose(o.reshape(-1), [1.0, 0.5, 0.25])


def test_scan_zero_input_stays_zero():
    rng = np.random.default_rng(3)
    cfg = small_config()
    params = ssm.init_params(cfg, rng)
    _, states, o = ssm.scan(np.zeros((8, cfg.embed_dim)), params, cfg)
    assert np.array_equal(states, np.zeros_like(states))
    assert np.array_equal(o, np.zeros_like(o))


def scan_oracle(x, params, config):
    """Step-by-step recurrence written independently of the production scan."""
    a = -np.exp(params["a_log"])
    t_len, e_dim = x.shape
    d_dim = a.shape[0]
    states = np.zeros((t_len, e_dim, d_dim))
    o = np.zeros((t_len, e_dim))
    prev = np.zeros((e_dim, d_dim))
    for k in range(t_len):
        delta = np.log1p(np.exp(params["W_delta"] @ x[k] + params["b_delta"]))
        b_in = params["W_B"] @ x[k]
        c_out = params["W_C"] @ x[k]
        cur = np.zeros((e_dim, d_dim))
        for e in range(e_dim):
            for d in range(d_dim):
                a_bar = np.exp(delta[e] * a[d])
                b_bar = (a_bar - 1.0) / a[d] * b_in[d]
                cur[e, d] = a_bar * prev[e, d] + b_bar * x[k, e]
        prev = cur
        states[k] = cur
        for e in range(e_dim):
            o[k, e] = float(np.dot(c_out, cur[e])) + params["skip_d"][e] * x[k, e]
    return states, o


def test_scan_matches_step_loop_oracle():
    rng = np.random.default_rng(11)
    for trial in range(10):
        cfg = small_config(
            embed_dim=int(rng.integers(1, 4)),
            state_dim=int(rng.integers(1, 4)),
            lookback=8,
        )
        params = ssm.init_params(cfg, rng)
        x = rng.normal(size=(8, cfg.embed_dim))
        _, states, o = ssm.scan(x, params, cfg)
        states_ref, o_ref = scan_oracle(x, params, cfg)
        assert np.max(np.abs(states - states_ref)) < 1e-12
        assert np.max(np.abs(o - o_ref)) < 1e-12


# -- posterior / sampling / head ---------------------------------------------------


def test_posterior_unit_variance_and_clamp():
    params = {
        "W_mu": np.zeros((2, 3)),
        "b_mu": np.zeros(2),
        "W_sigma": np.zeros((2, 3)),
        "b_sigma": np.zeros(2),
    }
    mu, ls = ssm.posterior(np.ones(3), params)
    assert np.array_equal(np.exp(ls), np.ones(2))

    params["b_sigma"] = np.full(2, -100.0)
    _, ls = ssm.posterior(np.ones(3), params)
    assert np.array_equal(ls, np.full(2, -8.0))


def test_sample_state_mean_and_determinism():
    mu = np.array([1.0, -2.0])
    ls = np.array([0.3, -1.0])
    assert np.array_equal(ssm.sample_state(mu, ls, np.zeros(2)), mu)
    n1 = np.random.default_rng(5).standard_normal(2)
    n2 = np.random.default_rng(5).standard_normal(2)
    assert np.array_equal(ssm.sample_state(mu, ls, n1), ssm.sample_state(mu, ls, n2))


def test_predict_head_shapes_and_constants():
    cfg = small_config(horizon=4, input_channels=3, bottleneck_dim=5)
    b = np.arange(12.0)
    params = {"W_y": np.zeros((12, 5)), "b_y": b}
    out = ssm.predict_head(np.ones(5), params, cfg)
    assert out.shape == (4, 3)
    assert np.array_equal(out, b.reshape(4, 3))

    cfg1 = small_config(horizon=1, input_channels=1, bottleneck_dim=3)
    params = {"W_y": np.array([[1.0, 0.0, 0.0]]), "b_y": np.zeros(1)}
    assert ssm.predict_head(np.array([2.0, 9.0, -4.0]), params, cfg1)[0, 0] == 2.0


# -- forward composition -----------------------------------------------------------


def zeroed_bias_params(cfg, rng):
    params = ssm.init_params(cfg, rng)
    for key in ("b_e", "b_mu", "b_sigma", "b_y", "dec_b1", "dec_b2"):
        params[key] = np.zeros_like(params[key])
    return params


def test_forward_zero_input_zero_biases_gives_zero_predictions():
    cfg = small_config()
    params = zeroed_bias_params(cfg, np.random.default_rng(0))
    window = np.zeros((cfg.lookback + cfg.horizon, cfg.input_channels))
    trace = ssm.forward(window, params, cfg, noise=np.zeros((cfg.lookback, cfg.bottleneck_dim)))
    assert np.array_equal(trace.predictions, np.zeros_like(trace.predictions))


def test_forward_dead_channel_invariance():
    rng = np.random.default_rng(4)
    cfg = small_config()
    params = ssm.init_params(cfg, rng)
    params["W_e"][:, 1] = 0.0  # kill channel 1
    w1 = rng.normal(size=(cfg.lookback + cfg.horizon, 2))
    w2 = w1.copy()
    w2[:, 1] = rng.normal(size=cfg.lookback + cfg.horizon)
    noise = rng.standard_normal((cfg.lookback, cfg.bottleneck_dim))
    t1 = ssm.forward(w1, params, cfg, noise=noise)
    t2 = ssm.forward(w2, params, cfg, noise=noise)
    assert np.array_equal(t1.predictions, t2.predictions)
    assert np.array_equal(t1.states, t2.states)


def forward_oracle(window, params, cfg, noise):
    """Straight-line recomposition of the whole model, kept independent of
    ssm.forward internals."""
    t_len = cfg.lookback
    u = window[:t_len]
    x = u @ params["W_e"].T + params["b_e"]
    states, o = scan_oracle(x, params, cfg)
    mu = o @ params["W_mu"].T + params["b_mu"]
    ls = np.clip(o @ params["W_sigma"].T + params["b_sigma"], -8.0, 3.0)
    h = mu + np.exp(ls) * noise
    pred = (h @ params["W_y"].T + params["b_y"]).reshape(t_len, cfg.horizon, cfg.input_channels)
    return mu, ls, h, pred


def test_forward_matches_composition_oracle():
    rng = np.random.default_rng(21)
    cfg = small_config(lookback=8, embed_dim=2, state_dim=2, bottleneck_dim=2)
    params = ssm.init_params(cfg, rng)
    window = rng.normal(size=(cfg.lookback + cfg.horizon, cfg.input_channels))
    noise = rng.standard_normal((cfg.lookback, cfg.bottleneck_dim))
    trace = ssm.forward(window, params, cfg, noise=noise)
    mu, ls, h, pred = forward_oracle(window, params, cfg, noise)
    assert np.max(np.abs(trace.mu - mu)) < 1e-10
    assert np.max(np.abs(trace.log_sigma - ls)) < 1e-10
    assert np.max(np.abs(trace.h - h)) < 1e-10
    assert np.max(np.abs(trace.predictions - pred)) < 1e-10


def test_graph_forward_matches_plain_forward():
    rng = np.random.default_rng(22)
    cfg = small_config(lookback=6)
    params = ssm.init_params(cfg, rng)
    windows = rng.normal(size=(4, cfg.lookback + cfg.horizon, cfg.input_channels))
    noise = rng.standard_normal((4, cfg.lookback, cfg.bottleneck_dim))
    graph = ssm.build_graph(params, windows, noise, cfg, need_pred="all", with_recon=True)
    for i in range(4):
        trace = ssm.forward(windows[i], params, cfg, noise=noise[i], with_recon=True)
        assert np.max(np.abs(graph["pred"].value[i] - trace.predictions)) < 1e-12
        assert np.max(np.abs(graph["mu"].value[i] - trace.mu)) < 1e-12
        assert np.max(np.abs(graph["h"].value[i] - trace.h)) < 1e-12
        assert np.max(np.abs(graph["recon"].value[i] - trace.recon)) < 1e-12


def test_graph_last_position_predictions():
    rng = np.random.default_rng(23)
    cfg = small_config()
    params = ssm.init_params(cfg, rng)
    windows = rng.normal(size=(3, cfg.lookback + cfg.horizon, cfg.input_channels))
    full = ssm.build_graph(params, windows, None, cfg, need_pred="all", sample=False)
    last = ssm.build_graph(params, windows, None, cfg, need_pred="last", sample=False)
    assert np.array_equal(full["pred"].value[:, -1], last["pred"].value)


# -- invariants --------------------------------------------------------------------


def test_stability_long_sequence_no_overflow():
    rng = np.random.default_rng(31)
    cfg = small_config(lookback=10_000, embed_dim=2, state_dim=2, horizon=1)
    params = ssm.init_params(cfg, rng)
    # exaggerate gate weights; a_bar must still stay inside (0, 1)
    params["W_delta"] *= 10.0
    params["W_B"] *= 10.0
    window = rng.normal(size=(cfg.lookback + 1, cfg.input_channels))
    trace = ssm.forward(window, params, cfg, noise=np.zeros((cfg.lookback, cfg.bottleneck_dim)))
    assert np.all(np.isfinite(trace.states))
    assert np.all(np.isfinite(trace.predictions))


def test_stability_a_bar_strictly_inside_unit_interval():
    rng = np.random.default_rng(32)
    cfg = small_config()
    params = ssm.init_params(cfg, rng)
    a = -np.exp(params["a_log"])
    x = rng.normal(size=(cfg.lookback, cfg.embed_dim)) * 5.0
    for g in [ssm.gate(xk, params) for xk in x]:
        for e in range(cfg.embed_dim):
            a_bar, _ = ssm.discretize_zoh(a, g.b_in, g.delta[e])
            assert np.all(a_bar > 0.0) and np.all(a_bar < 1.0)


def test_causality_suffix_perturbation():
    rng = np.random.default_rng(33)
    cfg = small_config(lookback=10, horizon=3)
    params = ssm.init_params(cfg, rng)
    noise = rng.standard_normal((cfg.lookback, cfg.bottleneck_dim))
    w1 = rng.normal(size=(cfg.lookback + cfg.horizon, cfg.input_channels))
    for cut in (2, 5, 8):
        w2 = w1.copy()
        w2[cut + 1 :] += rng.normal(size=w2[cut + 1 :].shape)
        t1 = ssm.forward(w1, params, cfg, noise=noise)
        t2 = ssm.forward(w2, params, cfg, noise=noise)
        assert np.array_equal(t1.predictions[: cut + 1], t2.predictions[: cut + 1])


def test_selectivity_single_step_gate_locality():
    rng = np.random.default_rng(34)
    cfg = small_config(lookback=6)
    params = ssm.init_params(cfg, rng)
    x = ssm.embed(rng.normal(size=(cfg.lookback, cfg.input_channels)), params)
    x2 = x.copy()
    x2[3] *= 2.5
    g1 = [ssm.gate(xk, params) for xk in x]
    g2 = [ssm.gate(xk, params) for xk in x2]
    for k in range(cfg.lookback):
        same = (
            np.array_equal(g1[k].delta, g2[k].delta)
            and np.array_equal(g1[k].b_in, g2[k].b_in)
            and np.array_equal(g1[k].c_out, g2[k].c_out)
        )
        assert same == (k != 3)


def test_deterministic_equals_zero_noise():
    rng = np.random.default_rng(35)
    cfg_s = small_config(stochastic=True)
    cfg_d = small_config(stochastic=False)
    params = ssm.init_params(cfg_s, rng)
    window = rng.normal(size=(cfg_s.lookback + cfg_s.horizon, cfg_s.input_channels))
    t_s = ssm.forward(window, params, cfg_s, noise=np.zeros((cfg_s.lookback, cfg_s.bottleneck_dim)))
    t_d = ssm.forward(window, params, cfg_d)
    assert np.array_equal(t_s.predictions, t_d.predictions)
    assert np.array_equal(t_s.h, t_d.h)
    assert t_d.log_sigma is None
    assert np.array_equal(t_d.h, t_d.mu)
