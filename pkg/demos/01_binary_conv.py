# Binary convolution, from sign bits to the six-step inference unit.
# Run: python3 demos/01_binary_conv.py

# %%
import numpy as np

from bitdiff.binarize import ActScaleParams, xnor_conv
from bitdiff.bitkernel import InferenceConvUnit, bench_conv, binary_inference_conv, pack_signs, xnor_popcount_conv
from bitdiff.tensor import Tensor, conv2d

rng = np.random.default_rng(0)

# %% packing: 65 channels need two 64-bit words per pixel, 63 pad bits
I = rng.choice([-1.0, 1.0], size=(65, 6, 6))
packed = pack_signs(I)
print("words per pixel:", packed.n_words, "pad bits:", packed.pad_bits)

# %% xnor + popcount on packed words equals the dense conv of the +-1 tensors
W = rng.choice([-1.0, 1.0], size=(4, 65, 3, 3))
fast = xnor_popcount_conv(packed, pack_signs(W), padding=1).data
dense = conv2d(Tensor(I[None]), Tensor(W), padding=1).data[0]
print("exact match:", np.array_equal(fast, dense.astype(np.int64)))

# %% real-valued input and weights: the training path scales sign conv by A*k and sigma
x = rng.standard_normal((1, 32, 8, 8)).astype(np.float32)
w = rng.standard_normal((16, 32, 3, 3)).astype(np.float32)
k = rng.uniform(0.0, 0.3, (1, 1, 3, 3))
p = ActScaleParams.create("bidm_learnable_k", kh=3, kw=3, dtype=np.float64)
p.k_filter = Tensor(k)
train_out = xnor_conv(Tensor(x.astype(np.float64)), Tensor(w.astype(np.float64)), p, padding=1).data

# the inference unit stores packed weights, per-channel alpha and k
unit = InferenceConvUnit.from_float(w, k, padding=1)
infer_out = binary_inference_conv(x, unit).data
print("max |inference - training|:", float(np.abs(infer_out - train_out).max()))

# %% timing at a small shape; packing the input costs about as much as the
# tiny float GEMM here, the gain shows at the default 448x32x32 bench shape
r = bench_conv(((64, 16, 16), (64, 64, 3, 3)), repetitions=5)
print(f"fp {r['fp_ns'] / 1e6:.2f} ms, packed {r['packed_ns'] / 1e6:.2f} ms, speedup {r['speedup']:.2f}x")
