"""Tour of the tape: record a computation, differentiate it, fit a line.

Run: python3 demos/autodiff_walkthrough.py
"""

import numpy as np

from slicedet.grid import Grid, add, backward, linear, mul, recording, reduce_mean, reduce_sum
from slicedet.gradcheck import central_difference
from slicedet.optim import ParamGroup, SgdOptimizer

rng = np.random.default_rng(11)

# 1. record a scalar expression and pull gradients back through it
a = Grid(rng.normal(size=(3, 3)), requires_grad=True)
b = Grid(rng.normal(size=(3, 3)), requires_grad=True)
with recording() as tape:
    loss = reduce_sum(mul(add(a, b), b))
backward(loss, tape)
print("loss            %.6f" % loss.item())
print("d loss / d a[0,0] analytic %.6f" % a.grad[0, 0])

# the same derivative by central differences, no tape involved
num = central_difference(lambda: reduce_sum(mul(add(a, b), b)), a, 0)
print("d loss / d a[0,0] numeric  %.6f" % num)

# 2. fit y = 2x - 1 from noisy samples with the same machinery
x = rng.uniform(-1.0, 1.0, size=(64, 1))
y = 2.0 * x - 1.0 + rng.normal(scale=0.05, size=(64, 1))
w = Grid(np.zeros((1, 1)), requires_grad=True, name="w")
bias = Grid(np.zeros((1,)), requires_grad=True, name="b")
xg = Grid(x)
yg = Grid(y)
opt = SgdOptimizer([ParamGroup("fit", {"w": w, "b": bias}, learning_rate=0.5)],
                   momentum=0.9)

for step in range(150):
    opt.zero_grad()
    with recording() as tape:
        pred = linear(xg, w, bias)
        err = add(pred, Grid(-y))
        fit_loss = reduce_mean(mul(err, err))
    backward(fit_loss, tape)
    opt.step()
    if step % 50 == 0:
        print("step %3d  mse %.5f" % (step, fit_loss.item()))

print("fitted w %.3f (true 2), b %.3f (true -1)" % (w.data[0, 0], bias.data[0]))
