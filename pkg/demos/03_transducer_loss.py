"""Transducer loss: the forward-backward lattice against brute-force alignment enumeration."""

import numpy as np

from chunktt import checks
from chunktt.lattice import brute_force_nll, lattice, loss, loss_grad

rng = np.random.default_rng(1)
T, U, V = 4, 2, 3
log_probs = checks.random_log_probs(rng, T, U, V)
target = [1, 2]

lat = lattice(log_probs, target)
print("lattice NLL      ", loss(log_probs, target))
print("enumerated NLL   ", brute_force_nll(log_probs, target))
print("alpha == beta    ", np.isclose(lat.log_likelihood, lat.log_likelihood_beta))

g = loss_grad(log_probs, target)
print("gradient shape   ", g.shape)
# every alignment path crosses each anti-diagonal t+u once, so each holds probability 1
print("mass per anti-diagonal:", np.round(np.exp(lat.diagonal_occupancy()), 12))
