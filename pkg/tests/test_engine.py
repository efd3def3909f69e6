import numpy as np
import pytest

from codedqr import codec, engine
from codedqr.errors import DimensionMismatch, RankDeficient, UnrecoverableFailure
from codedqr.gridsim import FaultSchedule, GridConfig, gather


def rand(n, seed):
    return np.random.default_rng(seed).random((n, n))


def two_by_two_generators(v=0.5):
    """f = 1 on a 2x2 grid: G_v = [-v^2/2, v], G_h = [1, 1]^T."""
    cv = codec.build_q_generator(2, 1, v_tilde=[v])
    ch = codec.CompactGenerator(np.ones((2, 1)), "horizontal", 1)
    return codec.GeneratorSet(cv, ch, 1, 1, 2, 2)


A2 = np.array([[2.0, 1.0], [1.0, 3.0]])


def dense_encoded(A, gens):
    Gv, Gh = gens.expand_v(), gens.expand_h()
    return np.block([[A, A @ Gh], [Gv @ A, Gv @ A @ Gh]])


# -- encode ---------------------------------------------------------------------


def test_encode_2x2_layout():
    gens = two_by_two_generators()
    run = engine.new_run(A2, GridConfig(2, 2, 2, 1), gens)
    engine.encode(run)
    q = run.state.q
    g1, v = -0.125, 0.5
    assert q[(0, 2)][0, 0] == A2[0, 0] + A2[0, 1]
    assert q[(1, 2)][0, 0] == A2[1, 0] + A2[1, 1]
    assert q[(2, 0)][0, 0] == pytest.approx(g1 * A2[0, 0] + v * A2[1, 0], abs=1e-15)
    assert q[(2, 1)][0, 0] == pytest.approx(g1 * A2[0, 1] + v * A2[1, 1], abs=1e-15)


def test_encode_zero_generator():
    gens = codec.build_generator_set(8, 4, 4, 1, seed=0)
    gens.compact_v = codec.build_q_generator(4, 1, v_tilde=np.zeros(3))
    run = engine.new_run(rand(8, 1), GridConfig(8, 4, 4, 1), gens)
    engine.encode(run)
    for J in range(run.state.cols):
        assert not np.any(run.state.q[(4, J)])


@pytest.mark.parametrize("n,p,f,storage", [(16, 4, 2, "out-of-node"), (12, 6, 1, "in-node"),
                                           (18, 6, 2, "out-of-node")])
def test_encode_matches_dense(n, p, f, storage):
    A = rand(n, 2)
    run = engine.new_run(A, GridConfig(n, p, p, f, storage, seed=4))
    engine.encode(run)
    assert np.max(np.abs(gather(run.state) - dense_encoded(A, run.generators))) <= 1e-13
    q_res, r_res = engine.audit_checksums(run)
    assert q_res <= 1e-14 and r_res <= 1e-14


def test_encode_rejects_mismatched_generators():
    gens = codec.build_generator_set(12, 6, 6, 1, seed=0)
    run = engine.new_run(rand(8, 0), GridConfig(8, 4, 4, 1), gens)
    with pytest.raises(DimensionMismatch):
        engine.encode(run)


# -- PBMGS ----------------------------------------------------------------------


def test_uncoded_accuracy():
    A = rand(64, 3)
    run = engine.factorize(A, GridConfig(64, 4, 4, 0))
    assert np.linalg.norm(A - run.q1 @ run.r1, 2) <= 1e-12 * np.linalg.norm(A, 2)
    assert np.linalg.norm(run.q1.T @ run.q1 - np.eye(64)) <= 1e-12


def test_identity_uncoded_and_coded():
    run = engine.factorize(np.eye(8), GridConfig(8, 4, 4, 0))
    assert np.array_equal(run.q1, np.eye(8)) and np.array_equal(run.r1, np.eye(8))
    # with checksums, Q1 is no longer I but A = Q1 R1 and G0 Q1 is orthogonal
    run = engine.factorize(np.eye(8), GridConfig(8, 4, 4, 1, seed=2))
    assert np.allclose(run.q1 @ run.r1, np.eye(8), atol=1e-14)
    qo = run.generators.g0 @ run.q1
    assert np.linalg.norm(qo.T @ qo - np.eye(8)) <= 1e-13
    assert np.all(np.diag(run.r1) > 0)


@pytest.mark.parametrize("storage,p,f", [("out-of-node", 4, 2), ("out-of-node", 4, 1),
                                         ("in-node", 6, 1), ("in-node", 6, 2)])
def test_reverse_diagonal_matches_fault_free(storage, p, f):
    n = 8 * p
    A = rand(n, 5)
    cfg = GridConfig(n, p, p, f, storage, seed=1)
    clean = engine.factorize(A, cfg)
    hit = engine.factorize(A, cfg, schedule=FaultSchedule.reverse_diagonal(p, f))
    assert len(hit.recovery_events) == p
    scale = np.linalg.norm(clean.q1)
    assert np.linalg.norm(hit.q1 - clean.q1) <= 1e-8 * scale
    assert np.linalg.norm(hit.r1 - clean.r1) <= 1e-8 * np.linalg.norm(clean.r1)


def test_checksum_preservation_and_final_form():
    n, p, f = 32, 4, 2
    A = rand(n, 6)
    run = engine.factorize(A, GridConfig(n, p, p, f, seed=3), audit=True)
    assert [t for t, _, _ in run.audit_log] == list(range(p + 1))
    assert all(q <= 1e-10 and r <= 1e-10 for _, q, r in run.audit_log)
    gens = run.generators
    At = dense_encoded(A, gens)
    Gv, Gh = gens.expand_v(), gens.expand_h()
    final = np.vstack([run.q1, Gv @ run.q1]) @ np.hstack([run.r1, run.r1 @ Gh])
    assert np.linalg.norm(At - final) <= 1e-9 * np.linalg.norm(At)


def test_audit_detects_corruption():
    run = engine.new_run(rand(16, 7), GridConfig(16, 4, 4, 1, seed=0))
    engine.encode(run)
    run.state.q[(1, 2)][0, 0] += 1.0
    q_res, _ = engine.audit_checksums(run)
    assert q_res > 1e-6


def test_unrecoverable_schedule():
    sched = FaultSchedule.explicit({0: [(0, 0), (0, 1)]}, 1)
    with pytest.raises(UnrecoverableFailure):
        engine.factorize(rand(8, 0), GridConfig(8, 4, 4, 1), schedule=sched)


def test_rank_deficient_input():
    A = np.ones((8, 8))
    with pytest.raises(RankDeficient):
        engine.factorize(A, GridConfig(8, 4, 4, 1))


# -- recovery -------------------------------------------------------------------


def test_two_by_two_recovery_walkthrough():
    gens = two_by_two_generators()
    cfg = GridConfig(2, 2, 2, 1)
    clean = engine.new_run(A2, cfg, gens)
    engine.encode(clean)
    engine._panel(clean, 0)
    engine._update(clean, 0)
    q, r = clean.state.q, clean.state.r
    g1, v = -0.125, 0.5
    # Q31 = g1 Q11 + v Q21 and R13 = R11 + R12 after the first iteration
    assert q[(2, 0)][0, 0] == pytest.approx(g1 * q[(0, 0)][0, 0] + v * q[(1, 0)][0, 0], abs=1e-15)
    assert r[(0, 2)][0, 0] == pytest.approx(r[(0, 0)][0, 0] + r[(0, 1)][0, 0], abs=1e-15)

    hit = engine.new_run(A2, cfg, gens)
    hit.state = clean.state.copy()
    lost_q, lost_r = q[(0, 0)].copy(), r[(0, 0)].copy()
    del hit.state.q[(0, 0)], hit.state.r[(0, 0)]
    engine.recover(hit, {(0, 0)})
    expect_q = (q[(2, 0)] - v * q[(1, 0)]) / g1
    assert np.max(np.abs(hit.state.q[(0, 0)] - expect_q)) <= 1e-12
    assert np.max(np.abs(hit.state.q[(0, 0)] - lost_q)) <= 1e-12
    assert np.max(np.abs(hit.state.r[(0, 0)] - (r[(0, 2)] - r[(0, 1)]))) <= 1e-12
    assert np.max(np.abs(hit.state.r[(0, 0)] - lost_r)) <= 1e-12


def _encoded_run(n, p, f, seed=0):
    run = engine.new_run(rand(n, seed), GridConfig(n, p, p, f, seed=seed))
    engine.encode(run)
    return run


def test_checksum_only_failure():
    run = _encoded_run(16, 4, 2)
    before = run.state.copy()
    node = (4, 1)  # checksum row node
    del run.state.q[node]
    engine.recover(run, {node})
    assert np.max(np.abs(run.state.q[node] - before.q[node])) <= 1e-14
    for k, blk in before.q.items():
        if k[0] < 4:
            assert np.array_equal(run.state.q[k], blk)
    assert run.recovery_events[-1]["f1"] == 0 and run.recovery_events[-1]["f2"] == 1


def test_mixed_failure_column():
    run = _encoded_run(16, 4, 2, seed=3)
    before = run.state.copy()
    failed = {(2, 1), (5, 1)}
    for node in failed:
        run.state.q.pop(node, None)
        run.state.r.pop(node, None)
    engine.recover(run, failed)
    for node in failed:
        ref = before.q[node]
        assert np.linalg.norm(run.state.q[node] - ref) <= 1e-11 * max(1.0, np.linalg.norm(ref))


# -- post-orthogonalization and solve --------------------------------------------


def test_post_orth_zero_coupling():
    gens = codec.build_generator_set(8, 4, 4, 1, seed=0)
    gens.compact_v = codec.build_q_generator(4, 1, v_tilde=np.zeros(3))
    Q = np.linalg.qr(rand(8, 1))[0]
    qo, bo = engine.post_orthogonalize(Q, np.arange(8.0), gens)
    assert np.array_equal(qo[:2], Q[:2]) and np.array_equal(qo[2:], -Q[2:])
    assert np.array_equal(bo[2:], -np.arange(2.0, 8.0))


@pytest.mark.parametrize("n,p,f", [(24, 6, 2), (16, 4, 1), (32, 8, 4)])
def test_post_orth_blockwise_vs_dense(n, p, f):
    A = rand(n, 9)
    run = engine.factorize(A, GridConfig(n, p, p, f, seed=5))
    b = np.random.default_rng(1).random(n)
    qo, bo = engine.post_orthogonalize(run.q1, b, run.generators)
    g0 = run.generators.g0
    assert np.max(np.abs(qo - g0 @ run.q1)) <= 1e-12
    assert np.max(np.abs(bo - g0 @ b)) <= 1e-12
    assert np.linalg.norm(qo.T @ qo - np.eye(n)) <= 1e-10 * n
    assert np.linalg.norm(run.q1.T @ run.q1 - np.eye(n)) >= 1e-3
    assert np.linalg.norm(g0 @ A - qo @ run.r1) <= 1e-9 * np.linalg.norm(A)


def test_solve_identity():
    b = np.arange(1.0, 9.0)
    x = engine.solve(np.eye(8), b, GridConfig(8, 4, 4, 2, seed=0))
    assert np.allclose(x, b, atol=1e-13)


def test_solve_two_by_two_with_failure():
    gens = two_by_two_generators()
    b = np.array([1.0, -2.0])
    sched = FaultSchedule.explicit({1: [(0, 0)]}, 1)
    run = engine.solve(A2, b, GridConfig(2, 2, 2, 1), schedule=sched, generators=gens,
                       return_run=True)
    assert np.max(np.abs(run.x - np.linalg.solve(A2, b))) <= 1e-12
    assert np.array_equal(gens.g0, [[1 - 0.125, 0.5], [0.5, -1.0]])


def test_solve_fault_transparency_n256():
    n, p, f = 256, 4, 2
    A, b = rand(n, 11), np.random.default_rng(12).random(n)
    cfg = GridConfig(n, p, p, f, seed=2)
    x0 = engine.solve(A, b, cfg)
    x1 = engine.solve(A, b, cfg, schedule=FaultSchedule.reverse_diagonal(p, f))
    assert np.linalg.norm(x1 - x0) <= 1e-8 * np.linalg.norm(x0)
    assert np.linalg.norm(A @ x0 - b) <= 1e-8 * np.linalg.norm(b)


def test_solve_random_schedule_in_node():
    n, p, f = 36, 6, 2
    A, b = rand(n, 13), np.ones(n)
    cfg = GridConfig(n, p, p, f, "in-node", seed=8)
    x0 = engine.solve(A, b, cfg)
    x1 = engine.solve(A, b, cfg, schedule=FaultSchedule.random(p, p, f, seed=4))
    assert np.linalg.norm(x1 - x0) <= 1e-8 * np.linalg.norm(x0)


def test_solve_rejects_bad_rhs():
    with pytest.raises(DimensionMismatch):
        engine.solve(np.eye(4), np.ones(3), GridConfig(4, 2, 2, 1))


def test_run_is_deterministic():
    A, b = rand(24, 3), np.ones(24)
    cfg = GridConfig(24, 4, 4, 2, alpha=1e-6, beta=1e-9, gamma=1e-11, seed=6)
    sched = FaultSchedule.random(6, 6, 2, seed=1)
    r1 = engine.solve(A, b, cfg, schedule=sched, return_run=True)
    r2 = engine.solve(A, b, cfg, schedule=sched, return_run=True)
    assert np.array_equal(r1.x, r2.x)
    assert r1.ledger.to_rows() == r2.ledger.to_rows()
