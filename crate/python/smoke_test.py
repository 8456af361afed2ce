"""Smoke test for the erpcl_py extension.

Build and install first:
    pip install --no-build-isolation ./crates/py
"""

import math
import os
import tempfile

import erpcl_py as ec


def main():
    ds = ec.synth(subjects=4, trials=48, seed=3)
    assert len(ds) == 4 * 48
    assert ds.subject_ids() == [1, 2, 3, 4]
    assert ds.n_channels == 8 and ds.n_samples == 128
    assert len(ds.trial(0)) == 8 * 128

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ds.erpd")
        ds.save(path)
        back = ec.Dataset.load(path)
        assert back.labels() == ds.labels()
        assert back.trial(5) == ds.trial(5)

    assert ec.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert ec.speller_decode([(c, 1.0 if c in (3, 9) else 0.0) for c in range(1, 13)]) == (2, 2)

    same = [[0.3, -1.2, 0.5]] * 6
    labels = [1, 0, 0, 0, 0, 0]
    loss = ec.contrastive_loss(same, labels, same, labels)
    assert abs(loss - 2 * math.log(6)) < 1e-9

    checks = ec.gradcheck()
    assert all(ok for _, _, ok in checks), checks

    train, val, test = ds.subset([1, 2]), ds.subset([3, 4]), ec.synth(subjects=2, trials=48, seed=4)
    model = ec.Model(seed=1)
    assert model.embedding_dim == 768
    hist = model.pretrain(train, val, epochs=2, patience=1, seed=1)
    assert len(hist) == 3
    hist = model.train_classifier(train, val, epochs=2, patience=1, seed=1)
    assert 0.0 <= hist[-1][2] <= 1.0
    logits = model.predict(test)
    assert len(logits) == len(test) and all(math.isfinite(z) for z in logits)
    report = model.evaluate(test)
    assert 0.0 <= report["auc_mean"] <= 1.0
    assert len(report["subjects"]) == 2

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.erpw")
        model.save(path)
        assert ec.Model.load(path).predict(test) == logits

    try:
        ec.auc([0.1, 0.2], [1, 1])
    except RuntimeError:
        pass
    else:
        raise AssertionError("single-class AUC should raise")
    try:
        ec.Dataset.load("/nonexistent.erpd")
    except ValueError:
        pass
    else:
        raise AssertionError("missing file should raise")

    print("smoke test ok:", ds, f"auc={report['auc_mean']:.3f}")


if __name__ == "__main__":
    main()
