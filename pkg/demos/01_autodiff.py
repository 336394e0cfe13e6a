"""Tour of the numerics core: tensors, autodiff, gradient checking, Adam."""

import numpy as np

from dualdet.numerics import (Adam, Tensor, add, check_gradients, matmul, mul,
                              relu, tsum)

print("== building a graph and differentiating it ==")
x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
w = Tensor(np.array([[0.5, -1.0], [2.0, 0.0]]), requires_grad=True)
y = tsum(relu(matmul(x, w)))
y.backward()
print("y          =", float(y.data))
print("dy/dx      =\n", x.grad)
print("dy/dw      =\n", w.grad)

print("\n== verifying gradients against central finite differences ==")
rng = np.random.default_rng(0)
a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
weights = Tensor(rng.normal(size=(3, 2)))
err = check_gradients(lambda: tsum(mul(matmul(a, b), weights)), [a, b])
print(f"worst relative error: {err:.2e} (threshold 1e-5)")

print("\n== fitting a line with Adam ==")
true_w, true_b = 2.5, -0.7
xs = rng.uniform(-1, 1, size=(64, 1))
ys = true_w * xs + true_b + 0.01 * rng.normal(size=(64, 1))
w_hat = Tensor(np.zeros((1, 1)), requires_grad=True)
b_hat = Tensor(np.zeros((1, 1)), requires_grad=True)
opt = Adam([w_hat, b_hat])
for step in range(200):
    pred = add(matmul(Tensor(xs), w_hat), b_hat)
    diff = add(pred, mul(Tensor(ys), -1.0))
    loss = mul(tsum(mul(diff, diff)), 1.0 / len(xs))
    opt.zero_grad()
    loss.backward()
    opt.step(lr=0.05)
    if step % 50 == 0:
        print(f"step {step:3d}  loss {loss.data.item():.5f}")
print(f"recovered w={w_hat.data.item():.3f} (true {true_w}), "
      f"b={b_hat.data.item():.3f} (true {true_b})")
