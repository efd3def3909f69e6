# %% [markdown]
# # How the coding overhead scales
# Analytic overheads relative to a QR lower bound at n=24000.

# %%
from codedqr import costmodel

rows = costmodel.scaling_sweep(costmodel.sweep_configs([4, 8, 16, 32], [1, 2, 4]))
print(f"{'p':>4} {'f':>3} {'ratio':>10}")
for r in rows:
    print(f"{r['p_r']:>4} {r['f']:>3} {r['ratio']:>10.4f}")

# %% [markdown]
# Doubling the grid side roughly halves the ratio; doubling f roughly doubles it.

# %%
trends = costmodel.scaling_trends(rows)
print("p doubling", [round(s, 3) for _, _, s in trends["p_doubling"]])
print("f doubling", [round(s, 3) for _, _, s in trends["f_doubling"]])
