"""
Loss kernels by hand
====================

Evaluate the contrastive regularizer, the generator and discriminator terms
and the knowledge term on tiny arrays whose values can be checked mentally.
"""

import math

import numpy as np

from radpretrain import losses

# %%
# Two orthonormal sentence encodings paired with themselves.
e = np.eye(2)
print("l_reg", losses.l_reg(e, e), "closed form", 0.5 * math.log(2 * math.e / (math.e + 1)))

# %%
# A two-token sequence: position 1 was masked and replaced.
batch = losses.RtdBatch(
    x=[5, 6], x_masked=[5, 4], x_corrupt=[5, 7],
    p_g=[[0, 0, 0, 0, 0, 0, 0.5, 0.5]], d=[0.9, 0.3], m=[1],
)
print("l_mlm", losses.l_mlm(batch, lambda_a=0.0), "= ln 2")
print("l_disc", losses.l_disc(batch), "= -ln 0.9 - ln 0.7")

# %%
# If the replacement shares an anatomical site with the original, the
# knowledge term scores it as real; disjoint sites keep it as replaced.
shared = losses.site_set_relation([None, ["lungs"]], [None, ["lungs"]])
disjoint = losses.site_set_relation([None, ["lungs"]], [None, ["heart"]])
print("l_kg shared", losses.l_kg(batch, shared), "disjoint", losses.l_kg(batch, disjoint))
print("combined", losses.l_disc_kg(batch, shared, weights=losses.LossWeights(1.0, 1.0)))
