"""Walk through the attention kernel and additive token masking.

The whole protection mechanism rests on one numeric fact: adding -inf to
a softmax logit removes that key from the distribution and renormalizes
the rest.  This script shows the kernel on a tiny example you can check
by hand.
"""

import numpy as np

from semshield import MASK_NEG, attention, masked_softmax

np.set_printoptions(precision=4, suppress=True)

# Two latent positions attending over three tokens.
queries = np.array([[1.0, 0.0], [0.0, 1.0]])
keys = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])

plain = attention(queries, keys, scale_dim=2)
print("plain attention (rows sum to 1):")
print(plain.values)

# Block token 2 for the first position only.  The additive mask uses the
# most negative finite float64 as its -inf realization.
mask = np.zeros((2, 3))
mask[0, 2] = MASK_NEG
shielded = attention(queries, keys, scale_dim=2, additive_mask=mask)
print("\nwith token 2 blocked for row 0:")
print(shielded.values)
print("row 0 mass on blocked token:", shielded.values[0, 2], "(exact zero)")
print("row 1 unchanged bit-for-bit:", bool((shielded.values[1] == plain.values[1]).all()))

# The same renormalization, seen directly on logits: blocking one of two
# equal logits moves all mass to the survivor.
out = masked_softmax(np.array([[0.0, 0.0]]), np.array([[MASK_NEG, 0.0]]))
print("\nsoftmax([0, 0]) with the first entry blocked ->", out[0])
