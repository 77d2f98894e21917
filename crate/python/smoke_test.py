"""Smoke test for the autoultr_py extension.

Build and install first:
    maturin develop --release -m crates/py/Cargo.toml
or
    maturin build --release -m crates/py/Cargo.toml && pip install target/wheels/autoultr_py-*.whl
"""

import math
import random
import tempfile

import autoultr_py as au


def close(a, b, tol=1e-10):
    return abs(a - b) <= tol


def main():
    assert close(au.ndcg_at_k([4, 0, 2], 3), 16.5 / (15 + 3 / math.log2(3)))
    assert close(au.err_at_k([4], 1), 0.9375)
    assert close(au.mse_propen([1.0, 2.5], [1.0, 2.0]), 0.125)
    assert au.significance_test([1.0, 2.0], [1.0, 2.0]) == 1.0

    assert au.inverse_power(1.0, 3) == [1.0, 0.5, 1.0 / 3.0]
    clicks = au.sample_clicks([4, 0, 2, 1, 3], seed=7)
    assert len(clicks) == 5 and set(clicks) <= {0, 1}
    assert au.sample_clicks([4, 0, 2, 1, 3], seed=7) == clicks

    f = au.softmax([math.log(0.7), math.log(0.3)])
    assert close(au.ipw_loss([0, 1], f, [0.6, 0.4]), -(0.6 / 0.4) * math.log(0.3))
    assert close(au.irw_loss([1, 0], f, [0.6, 0.4]), -math.log(0.6))

    data = au.generate_synthetic(n_queries=3, docs_per_query=4, n_features=5, seed=1)
    qid, labels, features = data[0]
    assert len(data) == 3 and len(labels) == 4 and len(features[0]) == 5

    rng = random.Random(0)
    x = [[rng.gauss(0, 1) for _ in range(5)] for _ in range(4)]
    for kind in ["mlp", "set_attention", "gru_init", "gru_rever", "gru_rand"]:
        s = au.Scorer(kind, 5, seed=3)
        scores = s.score(x)
        assert len(scores) == 4 and all(math.isfinite(v) for v in scores)
        again = au.Scorer.from_checkpoint(s.to_checkpoint())
        assert again.score(x) == scores
        ok, err = au.gradcheck(kind, seed=1)
        assert ok, (kind, err)

    for kind, invariant in [("mlp", True), ("set_attention", True), ("gru_init", False)]:
        v = au.check_invariance(au.Scorer(kind, 5, seed=3), list_length=4, n_inputs=3)
        assert v["pass"] == invariant, (kind, v)
        assert (v["witness"] is None) == invariant

    echo = au.validate_config([("train.steps", "7")])
    assert "train.steps" in echo and "# override" in echo
    try:
        au.validate_config([("train.list_size", "20")])
    except ValueError as e:
        assert "list_size" in str(e)
    else:
        raise AssertionError("expected a config error")

    with tempfile.TemporaryDirectory() as out:
        rows = au.run_experiment([
            ("output", out),
            ("gen.n_queries", "40"),
            ("gen.n_features", "4"),
            ("split", "20,5,15"),
            ("prod.fraction", "0.25"),
            ("repetitions", "1"),
            ("models", "mlp,mlp_naive"),
            ("mlp.steps", "5"),
            ("mlp_naive.steps", "5"),
        ])
    names = [r[0] for r in rows]
    assert names == ["mlp", "mlp_naive", "prod"], names
    assert rows[0][3] is not None and rows[1][3] is None

    print("smoke test passed")


if __name__ == "__main__":
    main()
