"""Regenerate src/diffvmaf/data/demo_model.json.

The demo model is an RBF epsilon-SVR fitted to a fixed, monotone
synthetic quality surface over the six features.  It exists so the
pipeline, tests and CLI run without the reference model file; its
scores are not comparable to official VMAF numbers.

Requires scikit-learn (a development-only dependency):

    python tools/make_demo_model.py
"""

from pathlib import Path

import numpy as np
from sklearn.svm import SVR

from diffvmaf.model import FEATURE_NAMES, VmafModel, save_model

OUT = Path(__file__).resolve().parents[1] / "src" / "diffvmaf" / "data" / "demo_model.json"

FEATURE_MAX = np.array([1.6, 1.6, 1.6, 1.6, 1.6, 40.0])
WEIGHTS = np.array([0.02, 0.05, 0.08, 0.10, 0.75])  # vif0..3, adm
SCORE_SLOPE, SCORE_INTERCEPT = 0.02, -1.0
GAMMA = 0.05


def target(raw: np.ndarray) -> np.ndarray:
    motion = raw[:, 5]
    return -4.0 + 100.0 * raw[:, :5] @ WEIGHTS + 4.0 * (1.0 - np.exp(-motion / 4.0))


def main(n: int = 3000, seed: int = 7):
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.0, 1.0, size=(n, 6)) * FEATURE_MAX
    slopes = 2.0 / FEATURE_MAX
    intercepts = -np.ones(6)
    x = raw * slopes + intercepts
    y = target(raw) * SCORE_SLOPE + SCORE_INTERCEPT
    svr = SVR(kernel="rbf", gamma=GAMMA, C=100.0, epsilon=0.002).fit(x, y)
    test = rng.uniform(0.0, 1.0, size=(4000, 6)) * FEATURE_MAX
    pred = (svr.predict(test * slopes + intercepts) - SCORE_INTERCEPT) / SCORE_SLOPE
    err = np.abs(pred - target(test))
    print(f"{len(svr.support_)} support vectors, max |err| {err.max():.3f}, mean {err.mean():.3f}")
    model = VmafModel(
        support_vectors=svr.support_vectors_,
        dual_coeffs=svr.dual_coef_.ravel(),
        gamma=GAMMA,
        intercept=float(svr.intercept_[0]),
        feature_order=FEATURE_NAMES,
        feature_norms=np.column_stack([slopes, intercepts]),
        score_norm=(SCORE_SLOPE, SCORE_INTERCEPT),
        name="demo (synthetic surface, not the reference model)",
    )
    save_model(model, OUT)
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
