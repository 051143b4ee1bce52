"""Smoke test for the `climb` extension module.

Builds the cdylib with cargo, copies it next to this script as climb.so and
exercises the main entry points. Set CLIMB_SKIP_BUILD=1 to reuse an existing
climb.so.
"""

import importlib
import math
import os
import shutil
import subprocess
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
ROOT = HERE.parents[2]


def build():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "climb-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    shutil.copy(ROOT / "target" / "release" / "libclimb.so", HERE / "climb.so")


def main():
    if not os.environ.get("CLIMB_SKIP_BUILD"):
        build()
    sys.path.insert(0, str(HERE))
    climb = importlib.import_module("climb")

    assert climb.shap_kernel(2, 1) == 0.5
    assert climb.shap_kernel(4, 2) == 0.125
    assert climb.derive_seed(1, "x", 0) == climb.derive_seed(1, "x", 0)

    data = climb.Dataset.synthetic(64, 200, 1.1, 10.0, 3)
    model = climb.Model.fit(data)
    assert len(data) == 64 and model.item_count == data.item_count

    user = max(data.user_ids(), key=lambda u: len(data.user_items(u)))
    items = data.user_items(user)[:8]
    target = model.top_recommendation(items)
    scores = model.score(items)
    assert abs(sum(scores) - 1.0) < 1e-12
    assert model.rank(items, target) >= 1

    exact = climb.exact_shapley(model, items, target)
    for name in ("lime", "shap", "climb"):
        e = climb.explain(model, items, target, name, n_samples=1000, seed=5)
        assert len(e["coefficients"]) == len(items)
        if name != "lime":
            assert abs(e["completeness_residual"]) <= 1e-8, e
    shap = climb.explain(model, items, target, "shap", n_samples=1000, seed=5)
    assert max(abs(a - b) for a, b in zip(shap["coefficients"], exact)) <= 1e-6

    masks = [[True, False, False], [False, True, False], [True, True, False], [False, False, True]]
    weights = [1.0, 2.0, 0.5, 1.5]
    labels = [0.3, 0.1, 0.5, 0.2]
    a = climb.solve_constrained(masks, weights, labels, 0.9, 0.05, 3)
    b = climb.solve_kkt(masks, weights, labels, 0.9, 0.05, 3)
    assert all(abs(x - y) <= 1e-10 for x, y in zip(a, b))
    assert abs(sum(a) - 0.85) <= 1e-12

    bv = climb.bias_variance(model, items, target, "climb", bootstraps=10, n_samples=300, seed=1)
    assert math.isclose(bv["mse"], bv["bias_sq"] + bv["variance"], abs_tol=1e-12)

    try:
        climb.explain(model, items, target, "nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown method accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
