"""The localization and trajectory losses on hand-made inputs."""
import numpy as np

from monotransmotion import losses

line = np.array([(0, 0), (1, 0), (2, 0), (3, 0)], dtype=float)
turned = np.array([(0, 0), (0, 1), (0, 2), (0, 3)], dtype=float)
print("directional loss, same direction:", losses.directional_loss(line, line).item())
print("directional loss, right angle:   ", losses.directional_loss(turned, line).item())
print("directional loss, reversed:      ", losses.directional_loss(line[::-1], line).item())

# the Laplace loss rewards a spread b that matches the relative range error
r_gt, r = 20.0, 22.0
for b in (0.01, 0.1, 1.0):
    print(f"laplace loss at b={b:<4}: {losses.laplace_loss([r], [b], [r_gt]).item():.3f}")
b_star, best = losses.laplace_optimum(abs(1 - r / r_gt))
print(f"optimal b = {b_star:.2f}, loss {best:.3f}")

print("trajectory loss (mean L2):", losses.trajectory_loss(line, line + [0.3, 0.4]).item())
