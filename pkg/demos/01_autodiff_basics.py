"""A tour of the reverse-mode tape that powers everything else.

Builds a small graph by hand, reads exact gradients off the tape, checks
them against central finite differences, and then fits a cubic with the
bundled Adam optimizer — no framework, just numpy underneath.
"""

import numpy as np

import meshspace.tensor as T


def main():
    print("== 1. a tiny graph ==")
    x = T.DTensor.param(np.array([2.0, -1.0, 0.5]))
    y = T.sum_(T.square(x) * 3.0 + x)
    y.backward()
    print("y  =", y.item())
    print("dy/dx =", x.grad, " (expect 6x+1 =", 6 * x.data + 1, ")")

    print("\n== 2. broadcasting tracks shapes ==")
    w = T.DTensor.param(np.ones((2, 3)))
    b = T.DTensor.param(np.zeros(3))
    out = T.mean(T.relu(w * 2.0 + b))
    out.backward()
    print("w.grad shape", w.grad.shape, " b.grad (summed over rows):", b.grad)

    print("\n== 3. finite-difference audit ==")
    rng = np.random.default_rng(0)
    a = T.DTensor.param(rng.normal(size=(4, 3)))
    m = T.DTensor.param(rng.normal(size=(3, 2)))

    def f():
        return T.sum_(T.sigmoid(T.matmul(a, m)))

    err = T.grad_check(f, [a, m])
    print(f"max relative error vs central differences: {err:.2e}")

    print("\n== 4. fitting y = x^3 - x with Adam ==")
    xs = np.linspace(-1.5, 1.5, 64)
    ys = xs ** 3 - xs
    feats = np.stack([xs, xs ** 2, xs ** 3], axis=1)
    coef = T.DTensor.param(np.zeros(3))
    opt = T.Adam({"coef": coef}, lr=0.05)
    for step in range(400):
        pred = T.matmul(T.DTensor.constant(feats), T.reshape(coef, (3, 1)))
        loss = T.mean(T.square(pred - ys.reshape(-1, 1)))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 100 == 0 or step == 399:
            print(f"  step {step:3d}  mse {loss.item():.6f}  coef {coef.data.round(3)}")
    print("true coefficients are [-1, 0, 1]")


if __name__ == "__main__":
    main()
