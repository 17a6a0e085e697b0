"""Walk through the three loss terms and the negative-mining schedule on toy vectors."""
import numpy as np

from coherent_embed import (MiningSchedule, first_order_loss, init_bank, nce_loss, radius, rotation_aux_loss,
                            second_order_loss, select_negatives)
from coherent_embed.core import DatasetIndex, VideoEntry

rng = np.random.default_rng(0)

# an anchor, a close positive and a few random negatives in 16-D
anchor = rng.standard_normal(16)
positive = anchor + 0.1 * rng.standard_normal(16)
negatives = rng.standard_normal((8, 16))

for tau in (1.0, 0.1):
    r = first_order_loss(anchor, positive, negatives, tau)
    print(f"first-order loss at tau={tau}: {r.value:.4f}")

# NCE needs the bank size K and a partition estimate Z; with Z = sum of exp(s/tau) over the bank it is exact
K = 9
Z = np.exp(np.array([anchor @ x / np.linalg.norm(anchor) / np.linalg.norm(x)
                     for x in [positive, *negatives]]) / 0.1).sum()
print("nce loss:", round(nce_loss(anchor, positive, negatives, 0.1, K, Z).value, 4))

# second order: three points on a straight line score better than a bent path
straight = second_order_loss([0, 0.0], [1, 0.0], [2, 0.0], [[1, 1.0], [0, 1.0]], 0.1).value
bent = second_order_loss([0, 0.0], [1, 0.0], [1, 1.0], [[2, 0.0], [0, 1.0]], 0.1).value
print(f"second-order loss: straight {straight:.4f}, bent {bent:.4f}")

print("rotation loss with flat logits:", round(rotation_aux_loss(np.zeros(4), 1).value, 4), "= ln 4")

# mining radius over 10 epochs: starts at r0 and approaches r_end
sched = MiningSchedule(r0=-1.0, r_end=1.0, epochs=10)
print("r(t):", [round(radius(sched, t), 3) for t in range(11)])

# pick the 3 hardest admissible negatives from a small bank of 3 videos;
# when too few sit under the radius the rest are drawn at random
index = DatasetIndex(tuple(VideoEntry(i, 5, f"v{i}", None) for i in range(3)))
bank = init_bank(index, dim=16, seed=1, dtype=np.float64)
q = bank.vectors[0]
for r_t in (-0.5, 0.0, 1.0):
    keys = select_negatives(bank, q, 0, 3, r_t, np.random.default_rng(0))
    print(f"r={r_t:+.1f}: keys {keys.tolist()} sims {np.round(bank.vectors[keys] @ q, 3).tolist()}")
