"""Linear-programming oracle for the restricted master problem.

The oracle contract is deliberately tiny: load a dense min-LP with row
senses, solve, read primal values, objective and row duals.  Dual signs
follow the standard convention for a minimization problem (free for
equalities, <= 0 for "<=" rows, >= 0 for ">=" rows), so a column's reduced
cost is always ``c_j - y . A_j``.

Two implementations: a self-contained dense two-phase simplex with a
Bland's-rule fallback against cycling (the default, adequate for the few
hundred rows / few thousand columns a desk-scale RMP reaches), and an
optional adapter over scipy's HiGHS for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_TOL = 1e-9


@dataclass
class LpSolution:
    status: str
    objective: float
    x: np.ndarray
    duals: np.ndarray


class LpOracle:
    """Abstract contract: dense min c.x s.t. A x (sense) b, x >= 0."""

    def solve(self, c, A, senses, b) -> LpSolution:  # pragma: no cover - interface
        raise NotImplementedError


class SimplexOracle(LpOracle):
    """Dense two-phase simplex on the slack-extended equality system."""

    def __init__(self, max_iters: int = 200_000, stall_switch: int = 40):
        self.max_iters = max_iters
        self.stall_switch = stall_switch  # degenerate pivots before Bland's rule

    def solve(self, c, A, senses, b) -> LpSolution:
        c = np.asarray(c, dtype=float)
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        m, n = A.shape
        assert len(senses) == m and len(b) == m and len(c) == n

        # slack-extend into equalities; remember slack column of each row
        slack_cols = []
        cols = [A]
        for i, s in enumerate(senses):
            if s == "=":
                slack_cols.append(None)
                continue
            col = np.zeros((m, 1))
            col[i, 0] = 1.0 if s == "<" else -1.0
            slack_cols.append(n + sum(1 for t in slack_cols if t is not None))
            cols.append(col)
        slack_cols = [sc for sc in slack_cols]
        Afull = np.hstack(cols) if len(cols) > 1 else A.copy()
        nfull = Afull.shape[1]
        cfull = np.concatenate([c, np.zeros(nfull - n)])

        # normalize rhs >= 0
        Afull = Afull.copy()
        bb = b.copy()
        for i in range(m):
            if bb[i] < 0:
                bb[i] = -bb[i]
                Afull[i, :] = -Afull[i, :]

        # phase 1: artificial basis
        art = np.eye(m)
        A1 = np.hstack([Afull, art])
        c1 = np.concatenate([np.zeros(nfull), np.ones(m)])
        basis = list(range(nfull, nfull + m))
        status, basis = self._iterate(A1, c1, bb, basis, phase=1)
        if status != OPTIMAL:
            return LpSolution(status, float("nan"), np.zeros(n), np.zeros(m))
        xb = self._basic_solution(A1, bb, basis)
        if float(c1[basis] @ xb) > 1e-7:
            return LpSolution(INFEASIBLE, float("nan"), np.zeros(n), np.zeros(m))
        # drive leftover artificials out of the basis where possible
        basis = self._purge_artificials(A1, bb, basis, nfull)
        if any(j >= nfull for j in basis):
            # redundant row stuck on an artificial at level ~0: freeze it by
            # keeping the artificial with an enormous cost so it stays at 0
            c2 = np.concatenate([cfull, np.full(m, 1e14)])
            status, basis = self._iterate(A1, c2, bb, basis, phase=2)
            A2, cused = A1, c2
        else:
            status, basis = self._iterate(Afull, cfull, bb, basis, phase=2)
            A2, cused = Afull, cfull
        if status != OPTIMAL:
            return LpSolution(status, float("nan"), np.zeros(n), np.zeros(m))
        xb = self._basic_solution(A2, bb, basis)
        x = np.zeros(A2.shape[1])
        x[basis] = xb
        Bmat = A2[:, basis]
        y = np.linalg.solve(Bmat.T, cused[basis])
        # undo row flips performed for rhs normalization
        flip = np.where(b < 0, -1.0, 1.0)
        return LpSolution(OPTIMAL, float(cused[:nfull] @ x[:nfull]), x[:n], y * flip)

    # -- internals ----------------------------------------------------------

    @staticmethod
    def _basic_solution(A, b, basis):
        return np.linalg.solve(A[:, basis], b)

    def _purge_artificials(self, A1, b, basis, nfull):
        basis = list(basis)
        for pos, j in enumerate(basis):
            if j < nfull:
                continue
            Bmat = A1[:, basis]
            try:
                d = np.linalg.solve(Bmat, A1[:, :nfull])
            except np.linalg.LinAlgError:
                continue
            row = d[pos, :]
            cand = [k for k in range(nfull) if abs(row[k]) > 1e-7 and k not in basis]
            if cand:
                basis[pos] = cand[0]
        return basis

    def _iterate(self, A, c, b, basis, phase):
        m = A.shape[0]
        basis = list(basis)
        degenerate_run = 0
        last_obj = None
        for _ in range(self.max_iters):
            Bmat = A[:, basis]
            try:
                xb = np.linalg.solve(Bmat, b)
                y = np.linalg.solve(Bmat.T, c[basis])
            except np.linalg.LinAlgError:
                return INFEASIBLE, basis
            rc = c - y @ A
            rc[basis] = 0.0
            use_bland = degenerate_run >= self.stall_switch
            if use_bland:
                neg = np.flatnonzero(rc < -_TOL)
                if neg.size == 0:
                    return OPTIMAL, basis
                enter = int(neg[0])
            else:
                enter = int(np.argmin(rc))
                if rc[enter] >= -_TOL:
                    return OPTIMAL, basis
            d = np.linalg.solve(Bmat, A[:, enter])
            pos = d > 1e-10
            if not pos.any():
                return UNBOUNDED, basis
            ratios = np.full(m, np.inf)
            ratios[pos] = xb[pos] / d[pos]
            best = ratios.min()
            ties = np.flatnonzero(np.abs(ratios - best) <= 1e-12)
            leave = int(min(ties, key=lambda i: basis[i]))
            basis[leave] = enter
            obj = float(c[basis] @ np.linalg.solve(A[:, basis], b))
            if last_obj is not None and obj >= last_obj - 1e-12:
                degenerate_run += 1
            else:
                degenerate_run = 0
            last_obj = obj
        return INFEASIBLE, basis


class HighsOracle(LpOracle):
    """scipy HiGHS adapter behind the same contract (cross-check use)."""

    def solve(self, c, A, senses, b) -> LpSolution:
        from scipy.optimize import linprog

        c = np.asarray(c, dtype=float)
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        senses = list(senses)
        eq = [i for i, s in enumerate(senses) if s == "="]
        ub = [i for i, s in enumerate(senses) if s in "<>"]
        sign = np.array([1.0 if senses[i] == "<" else -1.0 for i in ub])
        res = linprog(
            c,
            A_ub=A[ub] * sign[:, None] if ub else None,
            b_ub=b[ub] * sign if ub else None,
            A_eq=A[eq] if eq else None,
            b_eq=b[eq] if eq else None,
            bounds=(0, None),
            method="highs",
        )
        if res.status == 2:
            return LpSolution(INFEASIBLE, float("nan"), np.zeros(A.shape[1]), np.zeros(A.shape[0]))
        if res.status == 3:
            return LpSolution(UNBOUNDED, float("nan"), np.zeros(A.shape[1]), np.zeros(A.shape[0]))
        if res.status != 0:
            raise RuntimeError(f"HiGHS failed: {res.message}")
        duals = np.zeros(A.shape[0])
        if eq:
            duals[eq] = res.eqlin.marginals
        if ub:
            duals[ub] = res.ineqlin.marginals * sign
        return LpSolution(OPTIMAL, float(res.fun), res.x, duals)
