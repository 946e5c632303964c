"""Forward simulation of a mean-field system and exact cost evaluation.

The one-step benchmark has the closed form J(u) = 2 u^2 + 1, so the exact
tree cost can be compared against pencil-and-paper values.  A second instance
shows the mean-field coupling: the running mean feeds back into every node's
step, and the simulated means reproduce the deterministic mean recursion.
"""

import numpy as np

from mfsmp import builtin, constant_control, cost, simulate
from mfsmp.forward import mean_recursion_residual
from mfsmp.instances import e1_problem, random_control

spec = e1_problem()
tree = spec.build_tree()
print("benchmark: x(t+h) = x + u + w,  J = E x(T)^2 + u^2,  closed form 2u^2 + 1")
for u_val in (0.0, 0.5, 1.0):
    u = constant_control(spec, tree, u_val)
    print(f"  J({u_val:4.1f}) = {cost(spec, tree, u):.6f}   closed form {2*u_val**2 + 1:.6f}")

traj = simulate(spec, tree, constant_control(spec, tree, 0.0))
print("one-step states at the leaves:", traj.at(1).ravel())

# A mean-field instance: the drift and the costs see the running mean E x(t).
mf = builtin(
    "lq_meanfield", n=2, r=1, d=1, h=0.5, N=3, x0=[1.0, 0.0],
    A=[[0.1, 0.0], [0.0, 0.2]], A_mean=[[0.3, 0.0], [0.0, 0.3]], B=[[1.0], [0.5]],
    sigma=[{"C": [[0.2, 0.0], [0.0, 0.2]], "s0": [0.1, 0.1]}],
    Q=np.eye(2).tolist(), Q_mean=(0.5 * np.eye(2)).tolist(), R=[[1.0]],
    G=np.eye(2).tolist(), lo=-1.0, hi=1.0)
mf_tree = mf.build_tree()
u = random_control(mf, mf_tree, seed=1)
mf_traj = simulate(mf, mf_tree, u)
print("\nmean-field instance: level sizes", mf_tree.level_sizes)
print("running means per time:")
for k, mean in enumerate(mf_traj.means):
    print(f"  t = {mf_tree.grid.time(k):.2f}  E x = {mean}")
print("gap between tree means and the mean recursion:",
      mean_recursion_residual(mf, mf_tree, u, mf_traj))
print("cost J(u) =", cost(mf, mf_tree, u, traj=mf_traj))
