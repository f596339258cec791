"""The numeric kernels and the finite-difference gradient suite.

Shows that the fast GEMM convolution path agrees with the naive
nested-loop reference, that bilinear resizing projects odd-sized chips
onto the standard input size, and that every analytic gradient matches
central finite differences.
"""

import numpy as np

from stormchip import conv2d_naive, im2col, matmul, resize_bilinear
from stormchip.gradcheck import CHECK_KINDS, run_check

rng = np.random.default_rng(0)

print("1. convolution: im2col + matmul vs nested loops")
image = rng.normal(size=(3, 10, 10))
weights = rng.normal(size=(4, 3, 3, 3))
bias = rng.normal(size=4)
cols = im2col(image)                       # (27, 64) receptive-field columns
fast = (matmul(weights.reshape(4, -1), cols) + bias[:, None]).reshape(4, 8, 8)
slow = conv2d_naive(image, weights, bias)
print(f"   columns {cols.shape}, max |fast - naive| = {np.abs(fast - slow).max():.2e}")

print("2. bilinear projection of odd-sized chips to 150x150")
for h, w in [(127, 129), (128, 128), (64, 64)]:
    chip = rng.random((3, h, w))
    out = resize_bilinear(chip, 150, 150)
    print(f"   {h}x{w} -> {out.shape[1]}x{out.shape[2]}, "
          f"range [{out.min():.3f}, {out.max():.3f}] (input [{chip.min():.3f}, {chip.max():.3f}])")

print("3. finite-difference gradient checks (64-bit, h=1e-5)")
for kind in CHECK_KINDS:
    result = run_check(kind, seed=0)
    print(f"   {kind:<12} max rel err {result.max_rel_error:.2e}  "
          f"{'ok' if result.passed else 'MISMATCH'}")
