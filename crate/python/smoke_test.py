"""Smoke test for the stmamba extension module.

Run after `pip install --no-build-isolation -e crates/py`:

    python python/smoke_test.py
"""

import math
import os
import random
import tempfile

import stmamba


def uniform(shape, lo, hi, rng):
    n = math.prod(shape)
    return stmamba.Tensor([rng.uniform(lo, hi) for _ in range(n)], shape)


def check_scan():
    rng = random.Random(0)
    b, d, l, n = 2, 3, 40, 4
    x = uniform([b, d, l], -1, 1, rng)
    delta = uniform([b, d, l], 0.01, 0.5, rng)
    a = uniform([d, n], -2, -0.05, rng)
    bs = uniform([b, l, n], -1, 1, rng)
    cs = uniform([b, l, n], -1, 1, rng)
    skip = uniform([d], -1, 1, rng)
    seq = stmamba.selective_scan(x, delta, a, bs, cs, skip).tolist()
    par = stmamba.selective_scan(x, delta, a, bs, cs, skip, chunk=7).tolist()
    assert max(abs(p - q) for p, q in zip(seq, par)) < 1e-12
    try:
        stmamba.lti_convolution(x, delta, a, bs, cs, skip)
    except ValueError:
        pass
    else:
        raise AssertionError("time-varying system accepted by the kernel form")


def check_pool():
    values = [float(v) for v in range(12)]
    x = stmamba.Tensor(values, [1, 1, 1, 12])
    avg = stmamba.sliding_pool(x, "avg", 4, 4).tolist()
    var = stmamba.sliding_pool(x, "var", 4, 4).tolist()
    assert avg == [1.5, 5.5, 9.5], avg
    assert all(abs(v - 1.25) < 1e-12 for v in var), var


def check_training():
    train = stmamba.synth(12, 2, 3, 240, snr_db=20.0, seed=1)
    val = stmamba.synth(4, 2, 3, 240, snr_db=20.0, seed=2)
    train, (val,) = train.standardize([val])
    cfg = stmamba.ModelConfig(3, 240, 2)
    model = stmamba.STMambaNet(cfg, seed=0)
    assert model.num_parameters() > 0
    summary = model.fit(train, val, epochs=3, batch_size=8)
    assert len(summary["history"]) == 3
    metrics = model.evaluate(val)
    assert metrics["accuracy"] == summary["best_val_acc"]

    x = val.trials()
    logits = model.logits(x)
    assert logits.shape == [len(val), 2]
    preds = model.predict(x)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.ckpt")
        model.save(path)
        assert stmamba.STMambaNet.load(path).predict(x) == preds
        val.write(os.path.join(tmp, "val.eta"))
        back = stmamba.TrialSet.read(os.path.join(tmp, "val.eta"))
        assert back.labels == val.labels and back.trials().tolist() == x.tolist()

    try:
        stmamba.ModelConfig(3, 241, 2)
    except ValueError:
        pass
    else:
        raise AssertionError("invalid geometry accepted")


def check_selftest():
    results = stmamba.selftest()
    failed = [r["name"] for r in results if not r["passed"]]
    assert not failed, failed


if __name__ == "__main__":
    for check in (check_scan, check_pool, check_training, check_selftest):
        check()
        print(f"ok  {check.__name__}")
