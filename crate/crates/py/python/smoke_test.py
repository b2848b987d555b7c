"""Smoke test for the `signtune` extension module.

Build and install first, e.g. `maturin develop --release` in crates/py.
"""

import math
import tempfile

import signtune


def check_prompts():
    prompts = signtune.PromptSet.generate()
    assert len(prompts) == 46 * 8
    assert prompts.n_classes == 46
    assert prompts.digest() == signtune.PromptSet.generate().digest()
    assert len(prompts.texts(0)) == 8


def check_factor():
    raw, beta = signtune.adaptive_factor(0, 10, 0.0, 2.0, gamma=5.0)
    assert math.isclose(raw, 0.2) and math.isclose(beta, 0.2)
    raw, beta = signtune.adaptive_factor(10, 10, 2.0, 2.0, gamma=1.0)
    assert math.isclose(raw, 1.0)
    try:
        signtune.adaptive_factor(0, 10, 1.0, 0.0)
    except signtune.SigntuneError:
        pass
    else:
        raise AssertionError("zero anchor loss accepted")


def check_parameters():
    a = signtune.ParameterSet({"w": ([2], [0.0, 2.0])})
    b = signtune.ParameterSet({"w": ([2], [4.0, 6.0])})
    mid = signtune.interpolate(a, b, 0.5)
    assert mid.get("w") == ([2], [2.0, 4.0])
    assert signtune.interpolate(a, b, 1.0) == a
    assert signtune.squared_distance(a, b) == 32.0
    with tempfile.TemporaryDirectory() as tmp:
        path = f"{tmp}/p.bin"
        a.write(path)
        assert signtune.ParameterSet.read(path).digest() == a.digest()


def check_training():
    data = signtune.Dataset.synthetic(seed=0, per_class_region=10)
    assert len(data) == 6 * 3 * 10
    prompts = signtune.PromptSet.generate(n_classes=6)
    zs = signtune.zero_shot(prompts)
    ckpt = signtune.train(data, ["region-0"], prompts, strategy="adwe", epochs=3)
    assert ckpt.strategy == "adwe" and ckpt.epoch == 3
    assert len(ckpt.beta_history) == 3
    assert all(0.0 <= b <= 1.0 for b in ckpt.beta_history)
    per_region, avg = signtune.evaluate(ckpt, data, ["region-0"], prompts)
    assert set(per_region) == {"region-1", "region-2"}
    assert math.isclose(avg, sum(per_region.values()) / 2)
    zs_region, _ = signtune.evaluate(zs, data, ["region-0"], prompts)
    assert set(zs_region) == set(per_region)
    with tempfile.TemporaryDirectory() as tmp:
        ckpt.save(tmp)
        assert signtune.Checkpoint.load(tmp).params == ckpt.params


if __name__ == "__main__":
    check_prompts()
    check_factor()
    check_parameters()
    check_training()
    print("signtune smoke test passed")
