"""Constant-velocity Kalman filter forecasts from four observed steps."""
import numpy as np

from monotransmotion import kalman

t = np.arange(10) * 0.5
truth = np.column_stack([1.2 * t, 0.4 * t])
print("noise-free forecast error:", np.abs(kalman.kf_predict_trajectory(truth[:4], 6) - truth[4:]).max())

rng = np.random.default_rng(0)
noisy = truth[:4] + rng.normal(0, 0.05, (4, 2))
for q in (0.05, 0.5, 5.0):
    pred = kalman.kf_predict_trajectory(noisy, 6, q=q)
    print(f"q={q:<4}: final displacement error {np.linalg.norm(pred[-1] - truth[-1]):.3f} m")
