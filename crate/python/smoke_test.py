"""Smoke test for the pyhier extension module.

Build and install it first, e.g. `maturin develop --release -m crates/py/Cargo.toml`.
"""

import json
import math
import os
import tempfile

import pyhier


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(b))


def check_geometry():
    ball = pyhier.PoincareBall(0.1)
    sc = math.sqrt(0.1)
    x = ball.exp_map([1.0, 0.0])
    assert close(x[0], math.tanh(sc) / sc) and x[1] == 0.0

    u, v = [0.3, -0.4], [-0.5, 0.2]
    du = sum(a * a for a in u)
    dv = sum(a * a for a in v)
    duv = sum((a - b) ** 2 for a, b in zip(u, v))
    want = math.acosh(1 + 2 * 0.1 * duv / ((1 - 0.1 * du) * (1 - 0.1 * dv))) / sc
    assert close(ball.distance(u, v), want, 1e-10)
    assert close(ball.distance(u, v), ball.distance(v, u))
    assert ball.distance(u, u) == 0.0

    zero = ball.mobius_add([0.0, 0.0], u)
    assert all(close(a, b) for a, b in zip(zero, u))

    clipped = ball.clip_and_exp([10.0, 0.0], 2.3)
    assert close(clipped[0], math.tanh(sc * 2.3) / sc)
    assert close(ball.conformal_factor([0.0, 0.0]), 2.0)


def check_eval():
    # ((0, 1), (2, 3)) with internal nodes 4, 5 and root 6
    parents = [4, 4, 5, 5, 6, 6, None]
    w = [[0.0] * 4 for _ in range(4)]
    w[0][1] = w[1][0] = 1.0
    assert pyhier.dasgupta_cost(parents, 4, w) == 2.0
    w[0][2] = w[2][0] = 1.0
    assert pyhier.dasgupta_cost(parents, 4, w) == 6.0

    pts = [[0.0, 0.0], [0.1, 0.0], [2.0, 0.0], [2.1, 0.0]]
    assert pyhier.recall_at_k(pts, [0, 0, 1, 1], [1]) == [1.0]
    assert pyhier.recall_at_k(pts, [0, 1, 0, 1], [1]) == [0.0]


def check_gradcheck():
    for name, err, ok in pyhier.gradcheck(seed=1, instances=5):
        assert ok, (name, err)


def check_training():
    data = pyhier.SyntheticHierarchy(depth=2, branching=2, samples_per_class=20, feature_dim=8, seed=2)
    assert len(data) == 80 and data.num_classes == 4
    # two edges between siblings, four between cousins
    assert data.class_weight(0, 1) == 0.25 and data.class_weight(0, 2) == 0.0625

    config = json.dumps(
        {"proxy_count": 8, "K": 5, "epochs": 2, "batch_size": 20, "hidden_dims": [16], "embedding_dim": 4}
    )
    a = pyhier.Trainer(data, config)
    b = pyhier.Trainer(data, config)
    log_a, log_b = a.fit(), b.fit()
    assert log_a == log_b and len(log_a) == 2
    record = json.loads(log_a[-1])
    assert record["recall@1"] == a.evaluate()[1]
    assert all(0.1 * sum(x * x for x in p) < 1.0 for p in a.test_embeddings())
    assert len(a.proxy_points()) == 8

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "run.ckpt")
        c = pyhier.Trainer(data, json.dumps({**json.loads(config), "epochs": 3}))
        c.train_epoch()
        c.save(path)
        resumed = pyhier.Trainer.resume(path, data)
        assert resumed.step == c.step
        assert resumed.train_step() == c.train_step()

        feats, tree = os.path.join(tmp, "f.bin"), os.path.join(tmp, "tree.txt")
        data.save(feats, tree)
        ids, labels, rows = pyhier.read_features(feats)
        assert ids == list(range(80)) and labels == data.labels and len(rows[0]) == 8


if __name__ == "__main__":
    check_geometry()
    check_eval()
    check_gradcheck()
    check_training()
    print("pyhier smoke test passed")
