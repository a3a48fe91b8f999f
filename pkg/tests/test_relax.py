import itertools
import json

import numpy as np
import pytest

from sprkit import relax
from sprkit.relax import MipInstance

# 1-D worked instance: L = (w - 1)^2, lam = 1, alpha = 0.5, M = 2
SCAN = np.arange(-2.0, 2.0 + 1e-12, 1e-6)


def scan_bigm():
    return float(np.min((SCAN - 1) ** 2 + 0.5 * SCAN**2 + 0.25 * np.abs(SCAN)))


def scan_pr():
    # alpha = 0.5: z(w) = |w| while |w| <= 1 (interior), w^2/2 + 1/2 beyond
    z = np.where(np.abs(SCAN) <= 1, np.abs(SCAN), 0.5 * SCAN**2 + 0.5)
    return float(np.min((SCAN - 1) ** 2 + z))


def enumerate_int():
    # y = 0 forces w = 0; y = 1 is a ridge problem with closed form w = 2/3
    return min(1.0, (2 / 3 - 1) ** 2 + 0.5 * (2 / 3) ** 2 + 0.5)


def test_worked_instance_against_scan_and_enumeration_oracles():
    inst = relax.worked_instance()
    assert scan_bigm() == pytest.approx(0.4896, abs=1e-4)
    assert scan_pr() == pytest.approx(0.75, abs=1e-9)
    assert enumerate_int() == pytest.approx(5 / 6)
    r = relax.verify_ordering(inst)
    assert r.v_bigm == pytest.approx(scan_bigm(), abs=1e-9)
    assert r.v_pr == pytest.approx(scan_pr(), abs=1e-9)
    assert r.v_int == pytest.approx(enumerate_int(), abs=1e-12)
    assert r.w_bigm[0] == pytest.approx(7 / 12, abs=1e-9)
    assert r.w_pr[0] == pytest.approx(0.5, abs=1e-9)
    assert r.y_int.tolist() == [1.0]
    assert r.gap_bigm == pytest.approx(0.34375, abs=1e-6)
    assert r.gap_pr == pytest.approx(1 / 12, abs=1e-6)
    assert r.pr_tighter and r.ordering_ok
    assert r.v_joint == pytest.approx(0.75, abs=1e-9)


def test_zero_targets_give_zero_everywhere():
    inst = MipInstance([[1.0, 0.5], [0.2, 1.0]], [0.0, 0.0], [[0], [1]], 1.0, 0.4, 2.0)
    r = relax.verify_ordering(inst)
    assert r.v_bigm == 0 and r.v_pr == 0 and r.v_int == 0
    assert np.all(r.w_pr == 0) and np.all(r.y_pr == 0)


def test_huge_lambda_prunes_everything():
    inst = relax.gen_instance(3)
    inst.lam = 1e6
    out = relax.solve_integer(inst)
    assert np.all(out.y == 0) and np.all(out.w == 0)
    assert out.value == pytest.approx(inst.loss_value(np.zeros(inst.n)))


def test_lambda_zero_collapses_to_least_squares(caplog):
    rng = np.random.default_rng(0)
    A = rng.standard_normal((20, 4))
    b = A @ np.array([0.5, -0.3, 0.2, 0.1]) + 0.01 * rng.standard_normal(20)
    inst = MipInstance(A, b, [[0, 1], [2, 3]], 0.0, 0.0, 5.0)
    ls = np.linalg.lstsq(A, b, rcond=None)[0]
    v_ls = inst.loss_value(ls)
    r = relax.verify_ordering(inst)
    assert "ridge" in caplog.text
    for v in (r.v_bigm, r.v_pr, r.v_int, r.v_joint):
        assert v == pytest.approx(v_ls, abs=1e-8)
    assert abs(r.gap_bigm) < 1e-8 and abs(r.gap_pr) < 1e-8


def test_integer_solution_is_complementary_and_matches_brute_force():
    inst = relax.gen_instance(11, n_max=6, N_max=3)
    out = relax.solve_integer(inst)
    for g, y in zip(inst.groups, out.y):
        if y == 0:
            assert np.all(out.w[g] == 0)
    # independent brute force: every pattern solved by a generic bounded solver
    from scipy.optimize import minimize

    best = np.inf
    for pattern in itertools.product([0, 1], repeat=inst.N):
        cols = [j for g, y in zip(inst.groups, pattern) if y for j in g]

        def f(v):
            w = np.zeros(inst.n)
            w[cols] = v
            return relax.objective_int(inst, w, pattern)

        v = minimize(f, np.zeros(len(cols)), method="L-BFGS-B", bounds=[(-inst.M, inst.M)] * len(cols)).fun if cols else f([])
        best = min(best, v)
    assert out.value == pytest.approx(best, abs=1e-7)


def _cvx_values(inst):
    cp = pytest.importorskip("cvxpy")
    w = cp.Variable(inst.n)
    y = cp.Variable(inst.N)
    t = cp.Variable(inst.N)
    loss = cp.sum_squares(inst.A @ w - inst.b)
    lam, a, M = inst.lam, inst.alpha, inst.M
    box = []
    for i, g in enumerate(inst.groups):
        box += [cp.abs(w[g]) <= M * y[i]]
    base = [y >= 0, y <= 1] + box
    bigm = cp.Problem(cp.Minimize(loss + lam * (a * cp.sum_squares(w) + (1 - a) * cp.sum(y))), base)
    bigm.solve(solver="CLARABEL")
    persp = [cp.quad_over_lin(w[g], y[i]) <= t[i] for i, g in enumerate(inst.groups)]
    pr = cp.Problem(cp.Minimize(loss + lam * (a * cp.sum(t) + (1 - a) * cp.sum(y))), base + persp)
    pr.solve(solver="CLARABEL")
    return bigm.value, pr.value


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_relaxations_match_conic_oracle(seed):
    inst = relax.gen_instance(seed)
    v_bigm, v_pr = _cvx_values(inst)
    assert relax.solve_bigm_relaxation(inst).value == pytest.approx(v_bigm, rel=1e-6, abs=1e-6)
    assert relax.solve_pr_relaxation(inst).value == pytest.approx(v_pr, rel=1e-6, abs=1e-6)


def test_lower_clamp_instance_matches_conic_oracle():
    # small M with small alpha makes the lower clamp bind, exercising the exact prox
    rng = np.random.default_rng(5)
    A = rng.standard_normal((15, 6))
    b = A @ np.array([0.8, -0.7, 0.0, 0.0, 0.5, 0.4]) + 0.05 * rng.standard_normal(15)
    inst = MipInstance(A, b, [[0, 1], [2, 3], [4, 5]], 2.0, 0.05, 1.0)
    v_bigm, v_pr = _cvx_values(inst)
    pr = relax.solve_pr_relaxation(inst)
    assert pr.value == pytest.approx(v_pr, rel=1e-6, abs=1e-6)
    assert relax.solve_bigm_relaxation(inst).value == pytest.approx(v_bigm, rel=1e-6, abs=1e-6)
    r = relax.verify_ordering(inst)
    assert r.ordering_ok


def test_prox_closed_form_agrees_with_exact_search(rng):
    for _ in range(200):
        u = int(rng.integers(1, 6))
        v = rng.standard_normal(u) * rng.uniform(0.1, 3)
        alpha = float(rng.uniform(0.1, 0.9))
        tau = float(rng.uniform(0.01, 2))
        M = 10.0
        np.testing.assert_allclose(
            relax._prox_spr(v, tau, alpha, M), relax._prox_spr_exact(v, tau, alpha, M), atol=1e-9
        )


def test_prox_is_a_minimizer(rng):
    from sprkit.spr import spr_value

    for _ in range(100):
        u = int(rng.integers(1, 5))
        v = rng.standard_normal(u)
        alpha, tau, M = float(rng.uniform(0.01, 0.99)), float(rng.uniform(0.05, 1)), float(rng.uniform(0.3, 2))
        x = relax._prox_spr(v, tau, alpha, M)

        def h(z):
            if np.abs(z).max() > M:
                return np.inf
            return 0.5 * np.sum((z - v) ** 2) + tau * spr_value(z, alpha, M)

        hx = h(x)
        for _ in range(20):
            assert hx <= h(x + 1e-4 * rng.standard_normal(u)) + 1e-12


def test_linf_prox_matches_moreau_identity(rng):
    v = rng.standard_normal(7)
    x = relax._prox_linf_box(v, 0.8, 10.0)
    # v - prox_{k||.||_inf}(v) is the projection onto the l1 ball of radius k
    r = v - x
    assert np.abs(r).sum() == pytest.approx(0.8)
    assert relax._prox_linf_box(v, 100.0, 10.0).tolist() == [0.0] * 7
    assert np.abs(relax._prox_linf_box(10 * v, 0.1, 0.5)).max() == pytest.approx(0.5)


def test_logistic_instances_respect_ordering():
    for seed in range(3):
        inst = relax.gen_instance(seed, loss="logistic")
        r = relax.verify_ordering(inst)
        assert r.ordering_ok
        assert r.joint_gap < 1e-6


def test_generated_instances_respect_limits():
    for seed in range(20):
        inst = relax.gen_instance(seed)
        assert inst.A.shape[0] == 20 and inst.n <= 12 and inst.N <= 6
        assert inst.M >= 3 and 0.1 <= inst.alpha <= 0.9 and inst.lam > 0


def test_results_are_deterministic():
    a = relax.verify_ordering(relax.gen_instance(7))
    b = relax.verify_ordering(relax.gen_instance(7))
    assert a.row() == b.row()
    np.testing.assert_array_equal(a.w_pr, b.w_pr)


def test_instance_json_round_trip(tmp_path):
    inst = relax.gen_instance(2)
    inst.save(tmp_path / "i.json")
    back = MipInstance.load(tmp_path / "i.json")
    np.testing.assert_array_equal(back.A, inst.A)
    assert [g.tolist() for g in back.groups] == [g.tolist() for g in inst.groups]
    assert (back.lam, back.alpha, back.M, back.loss, back.seed) == (inst.lam, inst.alpha, inst.M, inst.loss, inst.seed)
    assert json.loads((tmp_path / "i.json").read_text())["schema_version"] == 1


def test_instance_validation():
    with pytest.raises(ValueError, match="partition"):
        MipInstance([[1.0, 2.0]], [1.0], [[0]], 1.0, 0.5, 1.0)
    with pytest.raises(ValueError, match="enumeration"):
        MipInstance(np.ones((2, 13)), [1.0, 1.0], [[j] for j in range(13)], 1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        MipInstance([[1.0]], [0.5], [[0]], 1.0, 0.5, 1.0, loss="logistic")
    with pytest.raises(ValueError):
        MipInstance([[1.0]], [1.0], [[0]], 1.0, 0.5, -1.0)


def test_strict_mode_raises_on_violation(monkeypatch):
    inst = relax.worked_instance()
    real = relax.solve_pr_relaxation

    def broken(*a, **k):
        out = real(*a, **k)
        out.value += 1.0  # now above v_int
        return out

    monkeypatch.setattr(relax, "solve_pr_relaxation", broken)
    assert not relax.verify_ordering(inst).ordering_ok
    with pytest.raises(relax.OrderingViolation):
        relax.verify_ordering(inst, strict=True)


def test_batch_csv_columns_and_rows():
    res = relax.run_batch(range(4))
    text = relax.batch_csv(res)
    lines = text.splitlines()
    assert lines[0] == ",".join(relax.BATCH_COLUMNS)
    assert len(lines) == 5
    first = dict(zip(relax.BATCH_COLUMNS, lines[1].split(",")))
    assert int(first["seed"]) == 0
    assert float(first["gap_bigm"]) == pytest.approx(res[0].gap_bigm)
