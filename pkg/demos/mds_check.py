# %% [markdown]
# # Are the structured generators MDS?
# Every square submatrix of the checksum generator must be nonsingular. We
# compare the worst condition number against a random left block with the same V.

# %%
import numpy as np

from codedqr import codec

for p, f in [(8, 2), (16, 3), (8, 4)]:
    s, r = [], []
    for seed in range(10):
        g = codec.build_q_generator(p, f, seed)
        rs = codec.check_mds(g.g_tilde)
        rr = codec.check_mds(codec.random_counterpart(g, seed=[seed, 1]))
        assert rs.is_mds
        s.append(np.log(rs.max_cond))
        r.append(np.log(rr.max_cond))
    print(f"p={p} f={f} structured/random max-cond factor {np.exp(np.mean(s) - np.mean(r)):.2f}")

# %% [markdown]
# At f = p/2 the block V is square and -VV^T/2 squares its conditioning,
# so the factor grows there.
