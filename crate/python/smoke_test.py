"""End-to-end smoke test for the tarnn_py extension module."""

import math
import tempfile
from pathlib import Path

import tarnn_py as t


def main() -> None:
    emb = t.time_embed(0.0, 4, 3.0)
    assert emb == [0.0, 1.0, 0.0, 1.0], emb
    assert abs(t.weighted_bce([1], [0.5], 0.7) - 0.485203) < 1e-6
    assert abs(t.f_beta([0.9, 0.9, 0.8, 0.7, 0.2], [1, 1, 0, 0, 0]) - 5 / 6) < 1e-12
    assert t.auc_roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    with tempfile.TemporaryDirectory() as tmp:
        d = Path(tmp)
        card = t.generate(str(d / "data.jsonl"), patients=120, seed=5)
        assert card["patients"] == 120
        n_train, n_test = t.split(str(d / "data.jsonl"), str(d / "train.jsonl"), str(d / "test.jsonl"), seed=1)
        assert n_train + n_test == 120

        losses = t.train(str(d / "train.jsonl"), str(d / "model.json"), epochs=10, seed=3)
        assert len(losses) == 10 and losses[-1] < losses[0], losses

        model = t.Model.load(str(d / "model.json"))
        assert model.variant == "ta-rnn" and model.scenario == (3, 1)
        ids, probs, labels = model.predict(str(d / "test.jsonl"))
        assert len(ids) == len(probs) == len(labels) > 0
        assert all(0.0 < p < 1.0 for p in probs)

        scores = model.evaluate(str(d / "test.jsonl"))
        print("test metrics:", {k: v for k, v in sorted(scores.items())})

        for ex in model.explain(str(d / "test.jsonl"), limit=5):
            assert math.isclose(sum(ex.alpha), 1.0, abs_tol=1e-9)
            assert all(math.isclose(sum(row), 1.0, abs_tol=1e-9) for row in ex.beta)
            assert math.isclose(sum(map(sum, ex.combined)), 1.0, abs_tol=1e-9)

        try:
            t.Model.load(str(d / "missing.json"))
        except OSError:
            pass
        else:
            raise AssertionError("loading a missing file should raise")

    print("smoke test passed")


if __name__ == "__main__":
    main()
