"""Walk through the aligned and natural layouts of a 4D mask tensor.

Run: python3 demos/tensor_transforms.py
"""

import numpy as np

from densemask import Interp, Repr, StructuredTensor, Units
from densemask import transforms as T
from densemask.oracles import swap_align2nat_naive

# An aligned tensor stores, at each HW location, the VU samples of a window
# whose pixel grid is shared with the feature map. Fill the data with a code
# so the shuffle done by align2nat is easy to read: value = 1000v + 100u + 10y + x.
V = U = 3
H = W = 5
v, u, y, x = np.meshgrid(np.arange(V) - V // 2, np.arange(U) - U // 2,
                         np.arange(H), np.arange(W), indexing="ij")
aligned = StructuredTensor(1000 * v + 100 * u + 10 * y + x, Repr.ALIGNED, Units(1, 1))

natural = T.align2nat(aligned, fill=-1)
print("natural window at (y, x) = (0, 1):")
print(natural.data[:, :, 0, 1].astype(int))
print("each entry reads the aligned sample at (y + v, x + u); -1 marks reads off the map\n")

back = T.nat2align(natural, fill=-1)
print("nat2align(align2nat(t)) restores the in-range entries:",
      np.array_equal(back.data[:, :, 1:4, 1:4], aligned.data[:, :, 1:4, 1:4]))

# The fused swap produces lambda-times finer windows on a lambda-times coarser
# grid without ever materializing the (lambda*V, lambda*U, H, W) intermediate.
lam = 4
rng = np.random.default_rng(0)
t = StructuredTensor(rng.normal(size=(5, 5, 16, 16)), Repr.ALIGNED, Units(lam, 1))
for interp in Interp:
    fused = T.swap_align2nat(t, lam, interp)
    naive = swap_align2nat_naive(t, lam, interp)
    print(f"{interp.value:>8}: shape {fused.shape}, units {fused.units}, "
          f"bit-identical to naive path: {np.array_equal(fused.data, naive.data)}")
