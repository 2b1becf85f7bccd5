"""Independent reference solutions used by the solver and acceptance tests."""
import itertools

import numpy as np


def lq_batch_optimum(prob, x0, w):
    """Exact minimiser of the LQ horizon cost by stacking all inputs into one
    least-squares problem (no recursion shared with the solvers)."""
    Ad, Bd, Ed = prob.discrete()
    N = len(w)
    nx, nu = prob.nx, prob.nu
    # X_k = Phi_k x0 + G_k U + h_k
    Phi = [np.eye(nx)]
    G = [np.zeros((nx, N * nu))]
    h = [np.zeros(nx)]
    for k in range(N):
        Gk = Ad @ G[-1]
        Gk[:, k * nu:(k + 1) * nu] += Bd
        Phi.append(Ad @ Phi[-1])
        G.append(Gk)
        h.append(Ad @ h[-1] + Ed * w[k])
    H = np.kron(np.eye(N), prob.R)
    q = np.zeros(N * nu)
    for k in range(N + 1):
        M = np.zeros((nx, nx))
        if k < N:
            M += prob.Q
        if k >= 1:
            M += prob.S
        if k == N:
            M += prob.Qf
        c = Phi[k] @ x0 + h[k]
        H += G[k].T @ M @ G[k]
        q += G[k].T @ M @ c
    U = np.linalg.solve(H, -q).reshape(N, nu)
    X = [x0]
    for k in range(N):
        X.append(Ad @ X[-1] + Bd @ U[k] + Ed * w[k])
    return np.array(X), U


class ToyProblem:
    """Nonlinear pendulum-like cart, one input, additive demand on the velocity:
        x1' = x1 + dt x2,   x2' = x2 + dt (u - a sin x1 + w)
        g   = 0.5 (x1' - 1)^2 + 0.05 x2'^2 + 0.1 u^2 + 0.05 u^4
    """

    nx, nu = 2, 1

    def __init__(self, dt=0.5, a=0.8):
        self.dt, self.a = dt, a

    def step_many(self, x, u, w):
        """Vectorised transition; x (...,2), u (...), w (...)."""
        dt = self.dt
        x1 = x[..., 0] + dt * x[..., 1]
        x2 = x[..., 1] + dt * (u - self.a * np.sin(x[..., 0]) + w)
        return np.stack([x1, x2], axis=-1)

    def stage_many(self, xn, u):
        return 0.5 * (xn[..., 0] - 1) ** 2 + 0.05 * xn[..., 1] ** 2 + 0.1 * u ** 2 + 0.05 * u ** 4

    def dynamics(self, n, x, u, w):
        w = np.atleast_1d(np.asarray(w, dtype=float))
        xn = self.step_many(np.broadcast_to(x, (w.size, 2)), float(u[0]), w)
        Fx = np.array([[1.0, self.dt], [-self.dt * self.a * np.cos(x[0]), 1.0]])
        Fu = np.array([[0.0], [self.dt]])
        J = w.size
        return xn, np.broadcast_to(Fx, (J, 2, 2)).copy(), np.broadcast_to(Fu, (J, 2, 1)).copy()

    def partials(self, n, x, xn, u, w):
        J = xn.shape[0]
        g = self.stage_many(xn, float(u[0]))
        gxn = np.stack([xn[:, 0] - 1, 0.1 * xn[:, 1]], axis=1)
        gu = np.full((J, 1), 0.2 * u[0] + 0.2 * u[0] ** 3)
        return g, np.zeros((J, 2)), gxn, gu

    def expansion(self, n, x, xn, u, w, Fx, Fu):
        g, gx, gxn, gu = self.partials(n, x, xn, u, w)
        Hn = np.diag([1.0, 0.1])
        gx = gx + np.einsum("jab,ja->jb", Fx, gxn)
        gu = gu + np.einsum("jab,ja->jb", Fu, gxn)
        gxx = np.einsum("jab,ac,jcd->jbd", Fx, Hn, Fx)
        guu = np.einsum("jab,ac,jcd->jbd", Fu, Hn, Fu) + (0.2 + 0.6 * u[0] ** 2)
        gux = np.einsum("jab,ac,jcd->jbd", Fu, Hn, Fx)
        return g, gx, gu, gxx, guu, gux

    def terminal(self, x):
        return 0.0, np.zeros(2), np.zeros((2, 2))

    def constraints(self, n, x):
        return None


def enumerate_expected_cost(prob, x0, U, P, levels, i0):
    """E[sum_n g] over every demand path, for one or many open-loop sequences.

    U has shape (..., N). The initial demand index is fixed, so the |W|^N
    path table carries zero weight on paths not starting at i0.
    """
    U = np.asarray(U, dtype=float)
    N = U.shape[-1]
    J = len(levels)
    total = np.zeros(U.shape[:-1])
    for path in itertools.product(range(J), repeat=N):
        if path[0] != i0:
            continue
        prob_path = np.prod([P[a, b] for a, b in zip(path, path[1:])])
        if prob_path == 0:
            continue
        x = np.broadcast_to(np.asarray(x0, dtype=float), U.shape[:-1] + (2,))
        cost = np.zeros(U.shape[:-1])
        for n in range(N):
            x = prob.step_many(x, U[..., n], levels[path[n]])
            cost = cost + prob.stage_many(x, U[..., n])
        total += prob_path * cost
    return total


def random_search(prob, x0, P, levels, i0, N, rng, samples=100_000, polish=20):
    """Best of uniform random sequences, each of the top few polished by
    finite-difference gradient descent with backtracking."""
    f = lambda U: enumerate_expected_cost(prob, x0, U, P, levels, i0)
    cand = rng.uniform(-3, 3, (samples, N))
    vals = np.concatenate([f(c) for c in np.array_split(cand, 20)])
    best_val = vals.min()
    for U in cand[np.argsort(vals)[:polish]]:
        val = f(U)
        step = 0.5
        for _ in range(400):
            h = 1e-6
            E = np.eye(N) * h
            grad = (f(U + E) - f(U - E)) / (2 * h)
            while step > 1e-12:
                trial = U - step * grad
                tv = f(trial)
                if tv < val:
                    U, val = trial, tv
                    step *= 1.5
                    break
                step *= 0.5
            if np.linalg.norm(grad) < 1e-9 or step <= 1e-12:
                break
        best_val = min(best_val, val)
    return best_val


def balanced_hhv_instance(seed=0, max_tries=50):
    """A horizon where the engine torque roughly covers the pump torque and the
    open-loop rollout stays inside the operating box. Returns (prob, U, x0, w, seed).

    Seeds are tried in order from `seed`; the first in-box rollout is used."""
    from hhvems import solver_sgdm
    from hhvems.cost import Box
    from hhvems.driver_model import MarkovModel, sample_index_path
    from hhvems.params import Config
    from hhvems.problems import HHVProblem

    cfg = Config()
    pr = cfg.vehicle
    box = Box.from_config(cfg.ddp, pr, cfg.fuel)
    prob = HHVProblem(pr, cfg.fuel, cfg.cost, box, cfg.sim.dt_model, None, 230e5, True)
    m = MarkovModel.gaussian()
    N = cfg.sim.N
    x0 = np.array([0.0, 9.0, 180.0, 210e5])
    pl = pr.pump_loss
    for s in range(seed, seed + max_tries):
        rng = np.random.default_rng(s)
        Vp = rng.uniform(0.2, 0.5, N) * pr.Vp_max
        T = Vp * x0[3] / (2 * np.pi) + pl.mu0 + pl.mu1 * x0[3] + pl.mu2 * x0[2]
        U = np.column_stack([T * rng.uniform(0.95, 1.05, N) / pr.m1, Vp / pr.m2])
        w = m.grid.levels[sample_index_path(m.P, 10, rng.random(N - 1))]
        X = solver_sgdm.rollout(prob, x0, U, w)
        if (np.all((X[:, 2] >= box.n_min) & (X[:, 2] <= box.n_max))
                and np.all((X[:, 3] >= box.p_min) & (X[:, 3] <= box.p_max))):
            return prob, U, x0, w, s
    raise RuntimeError("no in-box instance found")


def directional_agreement(prob, U, w, x0, rng, ndir=100, h=1e-3):
    """Analytic vs central-difference directional derivatives over random
    directions: returns (norm-relative error, per-direction relative errors)."""
    from hhvems import solver_sgdm

    g, _ = solver_sgdm.gradient(prob, U, w, x0)
    an, fd = [], []
    for _ in range(ndir):
        d = rng.standard_normal(U.shape)
        fd.append((solver_sgdm.horizon_cost(prob, U + h * d, w, x0)
                   - solver_sgdm.horizon_cost(prob, U - h * d, w, x0)) / (2 * h))
        an.append(float(np.sum(g * d)))
    an, fd = np.array(an), np.array(fd)
    return float(np.linalg.norm(an - fd) / np.linalg.norm(fd)), np.abs(an - fd) / np.abs(fd)


def fd_grad(prob, U, w, x0, h=1e-6):
    """Central-difference gradient of the open-loop horizon cost."""
    from hhvems import solver_sgdm

    G = np.zeros_like(U)
    for idx in np.ndindex(U.shape):
        E = np.zeros_like(U)
        E[idx] = h
        G[idx] = (solver_sgdm.horizon_cost(prob, U + E, w, x0)
                  - solver_sgdm.horizon_cost(prob, U - E, w, x0)) / (2 * h)
    return G


def box_oracle(H, q, lo, hi):
    """Candidates of a 2-D box QP: interior point, each edge's 1-D minimiser, corners."""
    f = lambda z: 0.5 * z @ H @ z + q @ z
    cands = [np.linalg.solve(H, -q)]
    for k in range(2):
        o = 1 - k
        for val in (lo[k], hi[k]):
            z = np.empty(2)
            z[k] = val
            z[o] = np.clip(-(q[o] + H[o, k] * val) / H[o, o], lo[o], hi[o])
            cands.append(z)
    cands += [np.array([a, b]) for a in (lo[0], hi[0]) for b in (lo[1], hi[1])]
    feas = [z for z in cands if np.all(z >= lo - 1e-12) and np.all(z <= hi + 1e-12)]
    return min(feas, key=f)
