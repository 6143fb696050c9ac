"""Joint modes from marginal predictions.

Two agents, two marginal modes each. The best joint mode pairs each agent's
best marginal, but the runner-up depends on how confident each agent is.
"""

# %%
import numpy as np

from jointpred.recombination import normalized_scores, recombine_beam, recombine_bruteforce

marginals = np.array([[0.7, 0.3], [0.6, 0.4]])
for mode in recombine_bruteforce(marginals):
    print(mode.indices, round(mode.score, 4))

# %%
# beam search keeps only the best `width` partial assignments per agent
top = recombine_beam(marginals, k=2)
print([m.indices for m in top], normalized_scores(top).round(3))

# %%
# with 8 agents and 6 modes there are 1.7M combinations; the beam only ever
# holds k * K candidates
rng = np.random.default_rng(0)
big = rng.dirichlet(np.ones(6), size=8)
for m in recombine_beam(big, k=6):
    print(m.indices, f"{m.score:.3e}")
