"""Small dense nonlinear least-squares engine over vector, S^2 and SO(3) blocks.

Factors expose ``keys`` and ``linearize(values) -> (r, [J_k])`` returning the
whitened residual and one whitened Jacobian per key, taken w.r.t. the tangent
perturbation of that variable.  The total cost is ``0.5 * sum ||r||^2`` plus
any constant ``offset`` a factor carries.

Problems here are a few hundred tangent dimensions at most, so the normal
equations are formed and factorised densely.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

from . import s2, so3
from .errors import RankDeficientError

log = logging.getLogger(__name__)

VECTOR, SPHERE, ROTATION = "vector", "s2", "so3"


@dataclass
class VariableBlock:
    key: object
    kind: str
    value: np.ndarray

    @property
    def dim(self):
        if self.kind == SPHERE:
            return 2
        if self.kind == ROTATION:
            return 3
        return int(np.size(self.value))


def retract(kind, value, delta):
    if kind == SPHERE:
        return s2.retract(value, delta)
    if kind == ROTATION:
        return value @ so3.exp(delta)
    return value + delta


def local(kind, base, value):
    """Tangent coordinates of ``value`` around ``base``; inverse of :func:`retract`."""
    if kind == SPHERE:
        return s2.local(base, value)
    if kind == ROTATION:
        return so3.log(base.T @ value)
    return value - base


def local_jacobian(kind, base, value):
    """Derivative of ``local(base, value)`` w.r.t. a perturbation of ``value``."""
    if kind == SPHERE:
        return s2.local_jacobians(base, value)[1]
    if kind == ROTATION:
        return so3.right_jacobian_inv(so3.log(base.T @ value))
    return np.eye(np.size(value))


def sqrt_information(cov):
    """Square-root information ``L`` with ``L^T L = cov^-1``."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError("covariance is not positive definite") from exc
    return solve_triangular(chol, np.eye(len(cov)), lower=True)


class GaussianFactor:
    """Base class: subclasses implement ``evaluate`` returning unwhitened error and Jacobians."""

    offset = 0.0
    # True when Jacobians are constant and every key is a vector block
    linear = False

    def __init__(self, keys, sqrt_info):
        self.keys = tuple(keys)
        self.sqrt_info = np.asarray(sqrt_info, dtype=float)

    def evaluate(self, values):
        raise NotImplementedError

    def linearize(self, values):
        e, jacs = self.evaluate(values)
        L = self.sqrt_info
        return L @ e, [L @ J for J in jacs]

    def cost(self, values):
        r, _ = self.linearize(values)
        return 0.5 * float(r @ r) + self.offset


class PriorFactor(GaussianFactor):
    """Unary Gaussian prior; works for every variable kind.

    On S^2 the error is ``-local(x, mean)``, i.e. the mean's tangent coordinates
    seen from the estimate, negated.
    """

    def __init__(self, key, kind, mean, cov, jacobian_mode="exact"):
        super().__init__((key,), sqrt_information(cov))
        self.kind = kind
        self.mean = np.array(mean, dtype=float)
        self.jacobian_mode = jacobian_mode
        self.linear = kind == VECTOR

    def evaluate(self, values):
        x = values[self.keys[0]]
        if self.kind == SPHERE:
            J1, _ = s2.local_jacobians(x, self.mean, self.jacobian_mode)
            return -s2.local(x, self.mean), [-J1]
        if self.kind == ROTATION:
            e = so3.log(self.mean.T @ x)
            return e, [so3.right_jacobian_inv(e)]
        return x - self.mean, [np.eye(x.size)]


class BetweenFactor(GaussianFactor):
    """Random-walk (diffusion) factor ``local(x1, x2)`` with zero mean."""

    def __init__(self, key1, key2, kind, cov, jacobian_mode="exact"):
        super().__init__((key1, key2), sqrt_information(cov))
        self.kind = kind
        self.jacobian_mode = jacobian_mode
        self.linear = kind == VECTOR

    def evaluate(self, values):
        x1 = values[self.keys[0]]
        x2 = values[self.keys[1]]
        if self.kind == SPHERE:
            J1, J2 = s2.local_jacobians(x1, x2, self.jacobian_mode)
            return s2.local(x1, x2), [J1, J2]
        if self.kind == ROTATION:
            e = so3.log(x1.T @ x2)
            Jinv = so3.right_jacobian_inv(e)
            return e, [-Jinv @ x2.T @ x1, Jinv]
        n = x1.size
        return x2 - x1, [-np.eye(n), np.eye(n)]


class MarginalPrior(GaussianFactor):
    """Dense linear Gaussian factor on tangent perturbations about a frozen point."""

    def __init__(self, keys, kinds, linearization_point, A, b, offset=0.0):
        super().__init__(keys, np.eye(len(b)))
        self.kinds = dict(kinds)
        self.linearization_point = {k: np.array(v, dtype=float) for k, v in linearization_point.items()}
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.offset = offset
        dims = [_tangent_dim(self.kinds[k], self.linearization_point[k]) for k in self.keys]
        self._slices = np.cumsum([0] + dims)

    def linearize(self, values):
        deltas = []
        jacs = []
        for i, k in enumerate(self.keys):
            kind = self.kinds[k]
            base = self.linearization_point[k]
            deltas.append(local(kind, base, values[k]))
            block = self.A[:, self._slices[i] : self._slices[i + 1]]
            if kind == VECTOR:
                jacs.append(block)
            else:
                jacs.append(block @ local_jacobian(kind, base, values[k]))
        r = self.A @ np.concatenate(deltas) + self.b
        return r, jacs


def _tangent_dim(kind, value):
    return VariableBlock(None, kind, value).dim


@dataclass
class OptimizeResult:
    cost: float
    initial_cost: float
    iterations: int
    converged: bool


def _solve(A, g):
    try:
        delta = -cho_solve(cho_factor(A, check_finite=False), g, check_finite=False)
    except LinAlgError:
        return None, False
    return delta, bool(np.all(np.isfinite(delta)))


class FactorGraph:
    """Variables plus Gaussian factors; single-writer, mutated in place."""

    def __init__(self):
        self.variables = {}
        self.factors = []
        self._revision = 0

    # -- construction -------------------------------------------------------
    def add_variable(self, key, kind, value):
        if key in self.variables:
            raise KeyError(f"variable {key!r} already exists")
        value = np.array(value, dtype=float)
        if kind == SPHERE:
            value = s2.normalize(value)
        self.variables[key] = VariableBlock(key, kind, value)
        self._revision += 1

    def add_factor(self, factor):
        for k in factor.keys:
            if k not in self.variables:
                raise KeyError(f"factor references unknown variable {k!r}")
        self.factors.append(factor)
        self._revision += 1
        return factor

    def values(self):
        return {k: v.value for k, v in self.variables.items()}

    def value(self, key):
        return self.variables[key].value

    def set_value(self, key, value):
        self.variables[key].value = np.array(value, dtype=float)

    def _ordering(self, keys=None):
        keys = list(self.variables) if keys is None else list(keys)
        offsets = {}
        n = 0
        for k in keys:
            offsets[k] = n
            n += self.variables[k].dim
        return offsets, n

    # -- linear algebra -----------------------------------------------------
    def _normal_equations(self, values, factors, offsets, n):
        if factors is not self.factors:
            H = np.zeros((n, n))
            g = np.zeros(n)
            cost = self._accumulate(values, factors, offsets, H, g)
            return H, g, cost
        cache = self._linear_part(values, offsets, n)
        nonlinear, J_lin, c_lin, H_lin, vidx, vkeys, const = cache
        H = H_lin.copy()
        g = np.zeros(n)
        cost = const
        if vkeys:
            x = np.zeros(n)
            x[vidx] = np.concatenate([values[k] for k in vkeys])
            r = J_lin @ x + c_lin
            cost += 0.5 * float(r @ r)
            g += J_lin.T @ r
        cost += self._accumulate(values, nonlinear, offsets, H, g)
        return H, g, cost

    def _linear_part(self, values, offsets, n):
        # Linear vector factors contribute r = J x + c with constant J; stack
        # them once per graph revision instead of re-linearising every call.
        key = (self._revision, tuple(offsets))
        cache = getattr(self, "_lin_cache", None)
        if cache is not None and cache[0] == key:
            return cache[1]
        lin = [f for f in self.factors if f.linear]
        nonlinear = [f for f in self.factors if not f.linear]
        vkeys = [k for k in offsets if self.variables[k].kind == VECTOR]
        vidx = np.concatenate(
            [np.arange(offsets[k], offsets[k] + self.variables[k].dim) for k in vkeys]
        ) if vkeys else np.zeros(0, dtype=int)
        rows = []
        consts = []
        const = 0.0
        x = np.zeros(n)
        if vkeys:
            x[vidx] = np.concatenate([values[k] for k in vkeys])
        for f in lin:
            r, jacs = f.linearize(values)
            J = np.zeros((len(r), n))
            for k, Jk in zip(f.keys, jacs):
                o = offsets[k]
                J[:, o : o + Jk.shape[1]] += Jk
            rows.append(J)
            consts.append(r - J @ x)
            const += f.offset
        if rows:
            J_lin = np.vstack(rows)
            c_lin = np.concatenate(consts)
        else:
            J_lin = np.zeros((0, n))
            c_lin = np.zeros(0)
        part = (nonlinear, J_lin, c_lin, J_lin.T @ J_lin, vidx, vkeys if rows else [], const)
        self._lin_cache = (key, part)
        return part

    def _accumulate(self, values, factors, offsets, H, g):
        cost = 0.0
        cols = {}
        for k, o in offsets.items():
            cols[k] = np.arange(o, o + self.variables[k].dim)
        for f in factors:
            r, jacs = f.linearize(values)
            cost += 0.5 * float(r @ r) + f.offset
            live = [i for i, k in enumerate(f.keys) if k in cols]
            if not live:
                continue
            J = np.hstack([jacs[i] for i in live]) if len(live) > 1 else jacs[live[0]]
            idx = np.concatenate([cols[f.keys[i]] for i in live]) if len(live) > 1 else cols[f.keys[live[0]]]
            g[idx] += J.T @ r
            H[np.ix_(idx, idx)] += J.T @ J
        return cost

    def cost(self, values=None):
        values = self.values() if values is None else values
        return sum(f.cost(values) for f in self.factors)

    def _retract_all(self, values, delta, offsets):
        out = dict(values)
        for k, o in offsets.items():
            blk = self.variables[k]
            out[k] = retract(blk.kind, values[k], delta[o : o + blk.dim])
        return out

    def linearize(self, values=None):
        """Gauss-Newton system ``(H, g, cost, offsets)`` at ``values``."""
        values = self.values() if values is None else values
        offsets, n = self._ordering()
        H, g, cost = self._normal_equations(values, self.factors, offsets, n)
        return H, g, cost, offsets

    # -- solver ---------------------------------------------------------------
    def optimize(self, max_iters=25, tol=1e-9, lambda_init=1e-4, lambda_max=1e10):
        """Levenberg-Marquardt with retraction updates.

        The first trial of every iteration is an undamped Gauss-Newton step;
        Marquardt damping ``lambda * diag(H)`` starts at ``lambda_init`` only
        once a step fails, growing x10 per rejection and shrinking /10 per
        acceptance.  Raises RankDeficientError when the undamped information
        matrix is singular at the starting point.
        """
        values = self.values()
        offsets, n = self._ordering()
        H, g, cost = self._normal_equations(values, self.factors, offsets, n)
        initial = cost
        diag = np.diag(H).copy()
        if n and (diag <= 1e-300).any():
            bad = [k for k, o in offsets.items() if (diag[o : o + self.variables[k].dim] <= 1e-300).any()]
            raise RankDeficientError(f"no information on variables {bad}")
        # J^T J is PSD, so a failed factorisation means it is singular
        gn_step, ok = _solve(H, g)
        if not ok:
            raise RankDeficientError("information matrix is singular; add priors on unobservable variables")
        lam = 0.0
        converged = False
        it = 0
        while it < max_iters:
            it += 1
            accepted = False
            solved = False
            while True:
                if lam == 0 and gn_step is not None:
                    delta, ok = gn_step, True
                else:
                    delta, ok = _solve(H + lam * np.diag(diag) if lam > 0 else H, g)
                gn_step = None
                if ok:
                    solved = True
                    trial = self._retract_all(values, delta, offsets)
                    H_t, g_t, cost_t = self._normal_equations(trial, self.factors, offsets, n)
                    if cost_t <= cost:
                        accepted = True
                        break
                lam = lambda_init if lam == 0 else lam * 10.0
                if lam > lambda_max:
                    break
            if not accepted:
                if not solved:
                    raise RankDeficientError("damped normal equations are singular")
                # no cost-reducing step at any damping: at a (numerical) minimum
                converged = True
                break
            decrease = cost - cost_t
            values, H, g = trial, H_t, g_t
            diag = np.diag(H).copy()
            prev, cost = cost, cost_t
            lam = 0.0 if lam <= lambda_init else lam / 10.0
            if decrease <= tol * max(prev, 1e-300) or cost <= 1e-300:
                converged = True
                break
            if lam == 0:
                # Predicted decrease of the next Gauss-Newton step; stopping on
                # it saves a relinearisation once the problem is quadratic.
                step, ok = _solve(H, g)
                if ok:
                    if -0.5 * float(g @ step) <= tol * max(cost, 1e-300):
                        converged = True
                        break
                    gn_step = step
        for k in offsets:
            self.variables[k].value = values[k]
        self._cache = (H, offsets)
        return OptimizeResult(cost=cost, initial_cost=initial, iterations=it, converged=converged)

    def _cached_system(self):
        cache = getattr(self, "_cache", None)
        if cache is not None and set(cache[1]) == set(self.variables):
            return cache
        H, _, _, offsets = self.linearize()
        return H, offsets

    def marginal_covariance(self, key, keys=None):
        """Tangent-space covariance of one variable (or a joint block) at the current estimate."""
        H, offsets = self._cached_system()
        sel = [key] if keys is None else list(keys)
        cols = np.concatenate(
            [np.arange(offsets[k], offsets[k] + self.variables[k].dim) for k in sel]
        )
        try:
            cf = cho_factor(H, check_finite=False)
        except LinAlgError as exc:
            raise RankDeficientError("information matrix is singular") from exc
        E = np.zeros((H.shape[0], cols.size))
        E[cols, np.arange(cols.size)] = 1.0
        cov = cho_solve(cf, E, check_finite=False)[cols]
        return 0.5 * (cov + cov.T)

    def marginalize(self, keys):
        """Eliminate ``keys`` by Schur complement into a :class:`MarginalPrior`.

        Factors touching the eliminated variables are linearised at the current
        estimate and removed; the returned prior (already added to the graph)
        connects the surviving neighbours.  Returns ``None`` when nothing
        survives.
        """
        keys = list(keys)
        drop = set(keys)
        touching = [f for f in self.factors if drop.intersection(f.keys)]
        remaining = [f for f in self.factors if not drop.intersection(f.keys)]
        sep = []
        for f in touching:
            for k in f.keys:
                if k not in drop and k not in sep:
                    sep.append(k)
        values = self.values()
        offsets, n = self._ordering(keys + sep)
        H, g, c0 = self._normal_equations(values, touching, offsets, n)
        nr = sum(self.variables[k].dim for k in keys)
        Hrr, Hrs, Hss = H[:nr, :nr], H[:nr, nr:], H[nr:, nr:]
        gr, gs = g[:nr], g[nr:]
        try:
            cf = cho_factor(Hrr, check_finite=False)
        except LinAlgError as exc:
            raise RankDeficientError(f"cannot eliminate {keys}: singular information") from exc
        X = cho_solve(cf, np.column_stack([Hrs, gr]), check_finite=False)
        H_s = Hss - Hrs.T @ X[:, :-1]
        g_s = gs - Hrs.T @ X[:, -1]
        cond_cost = c0 - 0.5 * float(gr @ X[:, -1])
        for k in keys:
            del self.variables[k]
        self.factors = remaining
        self._cache = None
        self._revision += 1
        if not sep:
            return None
        H_s = 0.5 * (H_s + H_s.T)
        w, V = np.linalg.eigh(H_s)
        keep = w > max(w.max(), 0.0) * 1e-14
        w, V = w[keep], V[:, keep]
        A = np.sqrt(w)[:, None] * V.T
        b = (V.T @ g_s) / np.sqrt(w)
        prior = MarginalPrior(
            sep,
            {k: self.variables[k].kind for k in sep},
            {k: values[k] for k in sep},
            A,
            b,
            offset=cond_cost - 0.5 * float(b @ b),
        )
        self.factors.append(prior)
        self._revision += 1
        return prior
