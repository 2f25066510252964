"""The reverse-mode tape, finite-difference checking, and Adam, from scratch.

Run:  python3 demos/03_autodiff.py
"""

import numpy as np

from kg2text import numerics as nm

# Build a small expression and pull gradients back through it.
x = nm.parameter(np.array([[1.0, -2.0], [0.5, 3.0]]))
w = nm.parameter(np.array([[0.1], [0.7]]))
y = nm.reduce_sum(nm.tanh(nm.matmul(x, w)))
y.backward()
print("d/dw of sum(tanh(x @ w)):")
print(w.grad, "\n")

# The same machinery that trains the models verifies itself numerically.
params = {"w": w}
err = nm.grad_check(lambda: nm.reduce_sum(nm.tanh(nm.matmul(x, w))), params,
                    seed=0)
print(f"worst relative error vs central differences: {err:.2e}\n")

# Adam on a bowl: five parameters, each pulled toward its target.
target = np.array([3.0, -1.0, 0.0, 2.5, 0.7])
theta = nm.parameter(np.zeros(5))
opt = nm.Adam({"theta": theta}, lr=0.1)
for step in range(200):
    diff = nm.add(theta, -target)
    loss = nm.reduce_sum(nm.mul(diff, diff))
    nm.zero_grads({"theta": theta})
    loss.backward()
    opt.step()
    if step % 50 == 0:
        print(f"step {step:3d}  loss {loss.item():.6f}")
print(f"final parameters: {np.round(theta.data, 3)}")
print(f"targets:          {target}")
