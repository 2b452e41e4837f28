"""Convex QCP interior-point solver and branch-and-bound on activations.

The QCP path is a Mehrotra-style primal-dual interior-point method on the
canonical form min c'x s.t. A x = b, f_j(x) <= 0, where each f_j is linear
or a single-variable convex quadratic. A presolve pass first substitutes
pinned variables, turns singleton rows into bounds and fixes variables in
forcing rows; this removes the empty-interior artifacts created by fixing
activations (a gated current constrained to [0, 0] and the like).

The MIQCP path is best-bound branch-and-bound over the activation binaries
only, with a rounding heuristic for the first incumbent. Everything is
deterministic: ties break lexicographically by module id then interval.
"""

from __future__ import annotations

import heapq
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import splu

from ffrsim.formulation import ProblemInstance


@dataclass(frozen=True)
class SolverConfig:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-8
    mip_gap: float = 1e-6
    time_limit: float = 30.0
    node_limit: int = 100_000
    branching: str = "most-fractional"
    parallel_nodes: int = 1
    max_iterations: int = 100

    def __post_init__(self):
        if self.feas_tol <= 0 or self.opt_tol <= 0 or self.mip_gap <= 0:
            raise ValueError("tolerances must be positive")
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        if self.branching not in ("most-fractional", "pseudo-cost"):
            raise ValueError(f"unknown branching rule {self.branching!r}")


@dataclass
class Solution:
    status: str  # optimal | feasible | infeasible | time_limit
    values: np.ndarray | None
    objective: float
    gap: float  # relative bound gap
    bound: float = -math.inf  # certified lower bound on the optimum
    nodes: int = 0
    iterations: int = 0
    solve_time: float = 0.0
    message: str = ""


def check_solution(instance: ProblemInstance, x: np.ndarray, tol: float = 1e-6) -> tuple[bool, float, str]:
    """Re-evaluate every constraint of the raw instance at x.

    Returns (ok, worst violation, description of the worst row). Violations
    are measured relative to max(1, row scale).
    """
    worst = 0.0
    what = ""

    def consider(viol, desc):
        nonlocal worst, what
        if viol > worst:
            worst, what = viol, desc

    lo = instance.lb - x
    hi = x - instance.ub
    for j in np.flatnonzero(lo > worst):
        consider(lo[j], f"lower bound of {instance.var_names[j]}")
    for j in np.flatnonzero(hi > worst):
        consider(hi[j], f"upper bound of {instance.var_names[j]}")
    if instance.a_eq.shape[0]:
        r = instance.a_eq @ x - instance.b_eq
        k = int(np.argmax(np.abs(r)))
        consider(abs(r[k]) / max(1.0, abs(instance.b_eq[k])), f"equality row {k}")
    if instance.a_ub.shape[0]:
        r = instance.a_ub @ x - instance.b_ub
        k = int(np.argmax(r))
        consider(r[k] / max(1.0, abs(instance.b_ub[k])), f"inequality row {k}")
    for k, q in enumerate(instance.quads):
        v = q.quad_coef * x[q.var] ** 2 + float(q.lin_coef @ x[q.lin_idx]) - q.rhs
        consider(v / max(1.0, abs(q.rhs)), f"quadratic row {k}")
    return worst <= tol, worst, what


class _Infeasible(Exception):
    pass


class _Presolved:
    """Reduced problem after substitution/tightening, plus the expansion map."""

    def __init__(self, instance, lb, ub, fixed, rows_eq, rows_ub, quads, obj_shift):
        self.instance = instance
        self.fixed = fixed  # full-length value array where pinned, nan where free
        self.free = np.flatnonzero(np.isnan(fixed))
        self.pos = {int(j): k for k, j in enumerate(self.free)}
        self.lb = lb[self.free]
        self.ub = ub[self.free]
        self.c = instance.c[self.free]
        self.obj_const = instance.obj_const + obj_shift
        n = self.free.size

        def pack(rows):
            data, ri, ci, rhs = [], [], [], []
            nrows = 0
            for terms, b in rows:
                for j, a in terms.items():
                    ri.append(nrows)
                    ci.append(self.pos[j])
                    data.append(a)
                rhs.append(b)
                nrows += 1
            mat = sp.csr_matrix((data, (ri, ci)), shape=(nrows, n))
            return mat, np.asarray(rhs, dtype=np.float64)

        self.a_eq, self.b_eq = pack(rows_eq)
        g_lin, h_lin = pack(rows_ub)

        # inequality stack: variable boxes, linear rows, quadratic rows
        box_rows = []
        for k in range(n):
            box_rows.append(({self.free[k]: 1.0}, self.ub[k]))
            box_rows.append(({self.free[k]: -1.0}, -self.lb[k]))
        g_box, h_box = pack(box_rows)
        g_quad_rows = [(q[2], q[3]) for q in quads]
        g_quad, h_quad = pack(g_quad_rows)
        self.g = sp.vstack([g_box, g_lin, g_quad], format="csr")
        self.h = np.concatenate([h_box, h_lin, h_quad])
        m = self.g.shape[0]
        self.qvar = np.full(m, -1, dtype=np.int64)
        self.qcoef = np.zeros(m)
        off = g_box.shape[0] + g_lin.shape[0]
        for k, (var, qc, _terms, _rhs) in enumerate(quads):
            self.qvar[off + k] = self.pos[var]
            self.qcoef[off + k] = qc

        # row scaling for conditioning (feasible set unchanged)
        row_max = np.abs(self.g).max(axis=1).toarray().ravel() if m else np.zeros(0)
        scale = 1.0 / np.maximum(np.maximum(row_max, np.abs(self.qcoef)), 1e-12)
        self.g = (sp.diags(scale) @ self.g).tocsr()
        self.h = self.h * scale
        self.qcoef = self.qcoef * scale
        if self.a_eq.shape[0]:
            emax = np.abs(self.a_eq).max(axis=1).toarray().ravel()
            es = 1.0 / np.maximum(emax, 1e-12)
            self.a_eq = (sp.diags(es) @ self.a_eq).tocsr()
            self.b_eq = self.b_eq * es

        # dense fast path for small problems: sparse-format overhead dominates
        self.dense = n + self.a_eq.shape[0] <= 400
        self.qmask = self.qvar >= 0
        self.qrows = np.flatnonzero(self.qmask)
        self.qcols = self.qvar[self.qrows]
        self.qc2 = 2.0 * self.qcoef[self.qrows]
        if self.dense:
            self.gd = self.g.toarray()
            self.ad = self.a_eq.toarray()

    def expand(self, x_red: np.ndarray) -> np.ndarray:
        x = self.fixed.copy()
        x[self.free] = x_red
        return x

    def f_of(self, x: np.ndarray) -> np.ndarray:
        fx = (self.gd @ x if self.dense else self.g @ x) - self.h
        if self.qrows.size:
            fx[self.qrows] += self.qcoef[self.qrows] * x[self.qcols] ** 2
        return fx

    def jac(self, x: np.ndarray):
        if self.dense:
            jd = self.gd.copy()
            jd[self.qrows, self.qcols] += self.qc2 * x[self.qcols]
            return jd
        if not self.qrows.size:
            return self.g
        extra = sp.csr_matrix(
            (self.qc2 * x[self.qcols], (self.qrows, self.qcols)),
            shape=self.g.shape,
        )
        return (self.g + extra).tocsr()

    def hess_diag(self, lam: np.ndarray) -> np.ndarray:
        d = np.zeros(self.free.size)
        np.add.at(d, self.qcols, self.qc2 * lam[self.qrows])
        return d


def _presolve(instance: ProblemInstance, bound_overrides: dict | None = None) -> _Presolved:
    lb = instance.lb.astype(np.float64).copy()
    ub = instance.ub.astype(np.float64).copy()
    if bound_overrides:
        for j, (lo, hi) in bound_overrides.items():
            lb[j] = max(lb[j], lo)
            ub[j] = min(ub[j], hi)

    eq_rows: list = []
    a = instance.a_eq.tocsr()
    for r in range(a.shape[0]):
        s = slice(a.indptr[r], a.indptr[r + 1])
        eq_rows.append([dict(zip(a.indices[s].tolist(), a.data[s].tolist())), float(instance.b_eq[r])])
    ub_rows: list = []
    a = instance.a_ub.tocsr()
    for r in range(a.shape[0]):
        s = slice(a.indptr[r], a.indptr[r + 1])
        ub_rows.append([dict(zip(a.indices[s].tolist(), a.data[s].tolist())), float(instance.b_ub[r])])
    quads: list = [
        [q.var, q.quad_coef, dict(zip(q.lin_idx.tolist(), q.lin_coef.tolist())), q.rhs]
        for q in instance.quads
    ]

    fixed = np.full(instance.n_vars, np.nan)
    obj_shift = 0.0
    tol = 1e-9

    def fix_var(j: int, v: float):
        nonlocal obj_shift
        if not math.isnan(fixed[j]):
            return
        if v < lb[j] - tol * (1 + abs(v)) or v > ub[j] + tol * (1 + abs(v)):
            raise _Infeasible(
                f"variable {instance.var_names[j]} forced to {v}, outside "
                f"[{lb[j]}, {ub[j]}]"
            )
        v = min(max(v, lb[j]), ub[j])
        fixed[j] = v
        lb[j] = v
        ub[j] = v
        obj_shift += instance.c[j] * v

    # seed with already-pinned boxes
    for j in range(instance.n_vars):
        if lb[j] > ub[j] + tol * (1 + abs(lb[j])):
            raise _Infeasible(
                f"variable {instance.var_names[j]}: lower bound {lb[j]} "
                f"exceeds upper bound {ub[j]}"
            )
        if ub[j] - lb[j] <= tol * (1 + abs(lb[j])):
            fix_var(j, 0.5 * (lb[j] + ub[j]))

    changed = True
    while changed:
        changed = False
        # substitute fixed variables into all rows
        for rows in (eq_rows, ub_rows):
            for row in rows:
                terms, rhs = row
                eliminated = [j for j in terms if not math.isnan(fixed[j])]
                for j in eliminated:
                    rhs -= terms.pop(j) * fixed[j]
                row[1] = rhs
        for q in quads:
            terms = q[2]
            eliminated = [j for j in terms if not math.isnan(fixed[j])]
            for j in eliminated:
                q[3] -= terms.pop(j) * fixed[j]

        # quadratic rows whose squared variable is pinned become linear
        still_quads = []
        for q in quads:
            var, qc, terms, rhs = q
            if not math.isnan(fixed[var]):
                ub_rows.append([terms, rhs - qc * fixed[var] ** 2])
                changed = True
            else:
                still_quads.append(q)
        quads = still_quads

        def scan(rows, is_eq):
            nonlocal changed
            keep = []
            for terms, rhs in rows:
                if not terms:
                    bad = abs(rhs) > 1e-7 if is_eq else rhs < -1e-7
                    if bad:
                        raise _Infeasible(
                            f"{'equality' if is_eq else 'inequality'} row became "
                            f"constant with rhs {rhs}"
                        )
                    changed = True
                    continue
                if len(terms) == 1:
                    (j, aj), = terms.items()
                    v = rhs / aj
                    if is_eq:
                        fix_var(j, v)
                    elif aj > 0 and v < ub[j] - tol:
                        ub[j] = v
                    elif aj < 0 and v > lb[j] + tol:
                        lb[j] = v
                    changed = True
                    continue
                # activity bounds over the variable boxes (all finite here)
                min_act = sum(a * (lb[j] if a > 0 else ub[j]) for j, a in terms.items())
                max_act = sum(a * (ub[j] if a > 0 else lb[j]) for j, a in terms.items())
                scale = 1.0 + abs(rhs)
                if min_act > rhs + 1e-7 * scale:
                    raise _Infeasible(
                        f"row infeasible: minimum activity {min_act} > rhs {rhs}"
                    )
                if is_eq and max_act < rhs - 1e-7 * scale:
                    raise _Infeasible(
                        f"row infeasible: maximum activity {max_act} < rhs {rhs}"
                    )
                if min_act >= rhs - tol * scale:
                    # forcing row: only the minimum-activity corner satisfies it
                    for j, a in terms.items():
                        fix_var(j, lb[j] if a > 0 else ub[j])
                    changed = True
                    continue
                if is_eq and max_act <= rhs + tol * scale:
                    for j, a in terms.items():
                        fix_var(j, ub[j] if a > 0 else lb[j])
                    changed = True
                    continue
                if not is_eq and max_act <= rhs + tol * scale:
                    changed = True  # row always satisfied
                    continue
                keep.append([terms, rhs])
            return keep

        eq_rows = scan(eq_rows, True)
        ub_rows = scan(ub_rows, False)

        for j in range(instance.n_vars):
            if math.isnan(fixed[j]):
                if lb[j] > ub[j] + tol * (1 + abs(lb[j])):
                    raise _Infeasible(
                        f"bounds of {instance.var_names[j]} crossed after tightening"
                    )
                if ub[j] - lb[j] <= tol * (1 + abs(lb[j])):
                    fix_var(j, 0.5 * (lb[j] + ub[j]))
                    changed = True

    return _Presolved(instance, lb, ub, fixed, eq_rows, ub_rows, quads, obj_shift)


def _ipm(red: _Presolved, config: SolverConfig, warm: np.ndarray | None, deadline: float):
    """Primal-dual interior-point loop on the reduced problem."""
    n = red.free.size
    if n == 0:
        return np.zeros(0), "optimal", 0, 0.0
    m = red.g.shape[0]
    p = red.a_eq.shape[0]

    x = 0.5 * (red.lb + red.ub)
    if warm is not None:
        w = warm[red.free]
        span = red.ub - red.lb
        x = np.clip(w, red.lb + 1e-3 * span, red.ub - 1e-3 * span)
    fx = red.f_of(x)
    s = np.maximum(-fx, 1.0)
    lam = np.ones(m)
    nu = np.zeros(p)

    c = red.c
    scale_c = 1.0 + float(np.max(np.abs(c))) if c.size else 1.0
    scale_b = 1.0 + (float(np.max(np.abs(red.b_eq))) if p else 0.0)
    delta = 1e-10

    status = "feasible"
    it = 0
    best_x = x.copy()
    best_key = (math.inf, math.inf)
    for it in range(1, config.max_iterations + 1):
        if time.perf_counter() > deadline:
            status = "time_limit"
            break
        fx = red.f_of(x)
        jac = red.jac(x)
        a_eq = red.ad if red.dense else red.a_eq
        r_dual = c + jac.T @ lam + (a_eq.T @ nu if p else 0.0)
        r_eq = (a_eq @ x - red.b_eq) if p else np.zeros(0)
        r_in = fx + s
        mu = float(lam @ s) / m
        obj = float(c @ x)
        cost_flow = float(np.abs(c) @ np.abs(x)) if n else 0.0
        pinf = max(
            float(np.max(np.abs(r_eq))) if p else 0.0,
            float(np.max(fx)) if m else 0.0,
        )
        dinf = float(np.max(np.abs(r_dual))) if n else 0.0
        gap_total = mu * m  # duality gap in objective units (row scaling cancels)
        gap_tol = config.opt_tol * (1.0 + abs(obj) + cost_flow)
        key = (max(pinf - config.feas_tol * scale_b, 0.0), gap_total)
        if key < best_key:
            best_key = key
            best_x = x.copy()
        if (
            pinf <= config.feas_tol * scale_b
            and dinf <= config.opt_tol * scale_c
            and gap_total <= gap_tol
        ):
            status = "optimal"
            break
        if best_key[0] == 0.0 and gap_total > 1e4 * max(best_key[1], 1e-14):
            # diverging after near-convergence: fall back to the best iterate
            x = best_x
            status = "optimal" if best_key[1] <= 10.0 * gap_tol else "feasible"
            break

        d = np.clip(lam / s, 1e-10, 1e12)
        w = red.hess_diag(lam)
        if red.dense:
            kkt = np.zeros((n + p, n + p))
            kkt[:n, :n] = (jac * d[:, None]).T @ jac
            kkt[:n, :n][np.diag_indices(n)] += w + delta
            if p:
                kkt[:n, n:] = a_eq.T
                kkt[n:, :n] = a_eq
                kkt[n:, n:][np.diag_indices(p)] -= delta
        else:
            jtd = (jac.T @ sp.diags(d) @ jac).tocsc()
            kkt11 = jtd + sp.diags(w + delta)
            if p:
                kkt = sp.bmat(
                    [[kkt11, red.a_eq.T], [red.a_eq, -delta * sp.eye(p)]],
                    format="csc",
                )
            else:
                kkt = kkt11.tocsc()

        lu = None
        reg = delta
        for _ in range(4):
            try:
                if red.dense:
                    lu = lu_factor(kkt)
                else:
                    lu = splu(kkt)
                break
            except (RuntimeError, np.linalg.LinAlgError, ValueError):
                reg *= 1e3
                if red.dense:
                    kkt[np.diag_indices(n + p)] += reg
                else:
                    kkt = kkt + sp.eye(n + p, format="csc") * reg
        if lu is None:
            status = "feasible"
            break

        def solve_kkt(rhs1, rhs2):
            full = np.concatenate([rhs1, rhs2]) if p else rhs1
            sol = lu_solve(lu, full) if red.dense else lu.solve(full)
            return (sol[:n], sol[n:]) if p else (sol, np.zeros(0))

        # affine predictor
        rhs1 = -r_dual - jac.T @ (d * r_in - lam)
        dx_a, dnu_a = solve_kkt(rhs1, -r_eq)
        ds_a = -r_in - jac @ dx_a
        dlam_a = -lam + d * r_in + d * (jac @ dx_a)
        ap_a = _max_step(s, ds_a)
        ad_a = _max_step(lam, dlam_a)
        mu_aff = float((lam + ad_a * dlam_a) @ (s + ap_a * ds_a)) / m
        sigma = min(max((mu_aff / mu) ** 3, 1e-8), 0.99) if mu > 0 else 0.1

        # corrector
        corr = (sigma * mu - ds_a * dlam_a) / s
        rhs1 = -r_dual - jac.T @ (d * r_in - lam + corr)
        dx, dnu = solve_kkt(rhs1, -r_eq)
        ds = -r_in - jac @ dx
        dlam = -lam + d * r_in + d * (jac @ dx) + corr
        ap = 0.99 * _max_step(s, ds)
        ad = 0.99 * _max_step(lam, dlam)
        x = x + ap * dx
        s = s + ap * ds
        lam = lam + ad * dlam
        if p:
            nu = nu + ad * dnu

    else:
        status = "feasible"

    if status in ("feasible", "time_limit") and best_key < (math.inf, math.inf):
        x = best_x
    if status in ("feasible", "time_limit"):
        fx = red.f_of(x)
        pinf = max(
            float(np.max(np.abs(red.a_eq @ x - red.b_eq))) if p else 0.0,
            float(np.max(fx)) if m else 0.0,
        )
        if pinf > 1e-6 * scale_b and status == "feasible":
            status = "infeasible"
    gap_total = float(lam @ s) if m else 0.0
    if best_key[1] < math.inf:
        gap_total = min(gap_total, best_key[1])
    return x, status, it, gap_total


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def solve_qcp(
    instance: ProblemInstance,
    config: SolverConfig | None = None,
    warm_start: np.ndarray | None = None,
) -> Solution:
    """Solve a binary-free convex instance to KKT tolerance."""
    config = config or SolverConfig()
    if instance.binary_idx:
        raise ValueError("instance still has binary variables; fix activations first")
    return _solve_continuous(instance, config, warm_start, None)


def _solve_continuous(instance, config, warm_start, bound_overrides) -> Solution:
    t0 = time.perf_counter()
    deadline = t0 + config.time_limit
    try:
        red = _presolve(instance, bound_overrides)
    except _Infeasible as exc:
        return Solution(
            status="infeasible",
            values=None,
            objective=math.inf,
            gap=math.inf,
            solve_time=time.perf_counter() - t0,
            message=str(exc),
        )
    x_red, status, iters, gap_total = _ipm(red, config, warm_start, deadline)
    if status == "infeasible":
        return Solution(
            status="infeasible",
            values=None,
            objective=math.inf,
            gap=math.inf,
            iterations=iters,
            solve_time=time.perf_counter() - t0,
            message="interior-point iterations did not reach feasibility",
        )
    x = red.expand(x_red)
    obj = float(instance.c @ x) + instance.obj_const
    ok, viol, what = check_solution(instance, x, tol=1e-6)
    if not ok and status == "optimal":
        status = "feasible"
    slop = 0.0 if status == "optimal" else 1e-6 * (1.0 + abs(obj))
    return Solution(
        status=status,
        values=x,
        objective=obj,
        gap=gap_total / (1.0 + abs(obj)),
        bound=obj - gap_total - slop,
        iterations=iters,
        solve_time=time.perf_counter() - t0,
        message="" if ok else f"residual {viol:.2e} on {what}",
    )


def _fractionality(x: np.ndarray, binary_idx: list[int]) -> np.ndarray:
    v = x[binary_idx]
    return np.minimum(v - np.floor(v + 1e-12), np.ceil(v - 1e-12) - v)


def solve_miqcp(
    instance: ProblemInstance,
    config: SolverConfig | None = None,
    hint: np.ndarray | None = None,
) -> Solution:
    """Branch-and-bound over activation binaries, best bound first.

    ``hint`` is an optional full 0/1 assignment over the binary variables
    (same order as instance.binary_idx) evaluated first as an incumbent.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    deadline = t0 + config.time_limit
    if not instance.binary_idx:
        return solve_qcp(instance, config)

    labels = instance.meta.get("binary_labels", {})
    order = sorted(
        range(len(instance.binary_idx)),
        key=lambda k: labels.get(instance.binary_idx[k], ("", k)),
    )
    rank = {k: pos for pos, k in enumerate(order)}
    int_tol = 1e-6
    # pseudo-cost history: mean objective increase seen when branching var k
    pseudo: dict[int, list[float]] = {}

    best_obj = math.inf
    best_x: np.ndarray | None = None
    nodes = 0

    def relax(overrides, warm=None):
        return _solve_continuous(instance, config, warm, overrides)

    def try_integral(alpha_bits: dict, warm=None):
        """Solve with the binaries pinned; update the incumbent."""
        nonlocal best_obj, best_x
        overrides = {
            instance.binary_idx[k]: (float(b), float(b)) for k, b in alpha_bits.items()
        }
        sol = relax(overrides, warm)
        nodes_inc()
        if sol.status in ("optimal", "feasible") and sol.values is not None:
            if sol.objective < best_obj - 1e-12:
                best_obj = sol.objective
                best_x = sol.values
        return sol

    def nodes_inc():
        nonlocal nodes
        nodes += 1

    if hint is not None:
        try_integral({k: int(round(hint[k])) for k in range(len(instance.binary_idx))})

    root = relax({})
    nodes_inc()
    if root.status == "infeasible":
        return Solution(
            status="infeasible", values=None, objective=math.inf, gap=math.inf,
            nodes=nodes, solve_time=time.perf_counter() - t0, message=root.message,
        )
    root_frac = _fractionality(root.values, instance.binary_idx)
    if np.max(root_frac) <= int_tol:
        bits = {
            k: int(round(root.values[instance.binary_idx[k]]))
            for k in range(len(instance.binary_idx))
        }
        try_integral(bits, warm=root.values)
        return Solution(
            status="optimal", values=best_x, objective=best_obj, gap=0.0,
            nodes=nodes, solve_time=time.perf_counter() - t0,
        )

    # rounding heuristic for a first incumbent
    bits = {
        k: int(root.values[instance.binary_idx[k]] >= 0.5)
        for k in range(len(instance.binary_idx))
    }
    try_integral(bits, warm=root.values)

    counter = 0
    heap: list = [(root.bound, counter, {}, root.values)]
    status = "optimal"
    pool = ThreadPoolExecutor(max_workers=config.parallel_nodes) if config.parallel_nodes > 1 else None
    try:
        while heap:
            if time.perf_counter() > deadline or nodes >= config.node_limit:
                status = "time_limit"
                break
            gap_abs = config.mip_gap * max(1.0, abs(best_obj))
            bound, _, overrides, xrel = heapq.heappop(heap)
            if bound >= best_obj - gap_abs:
                break  # best-bound order: everything left is pruned

            frac = _fractionality(xrel, instance.binary_idx)
            cand = [k for k in order if frac[k] > int_tol and instance.binary_idx[k] not in overrides]
            if not cand:
                bits = {
                    k: int(round(xrel[instance.binary_idx[k]]))
                    for k in range(len(instance.binary_idx))
                }
                try_integral(bits, warm=xrel)
                continue
            if config.branching == "pseudo-cost":
                def score(k):
                    hist = pseudo.get(k)
                    cost = sum(hist) / len(hist) if hist else 0.0
                    return (cost * frac[k], frac[k], -rank[k])
            else:
                def score(k):
                    return (frac[k], -rank[k])
            pick = max(cand, key=score)
            jvar = instance.binary_idx[pick]

            children = []
            for lohi in ((0.0, 0.0), (1.0, 1.0)):
                child_over = dict(overrides)
                child_over[jvar] = lohi
                children.append(child_over)
            if pool is not None:
                sols = list(pool.map(lambda ov: relax(ov, xrel), children))
            else:
                sols = [relax(ov, xrel) for ov in children]
            for child_over, sol in zip(children, sols):
                nodes_inc()
                if sol.status == "infeasible" or sol.values is None:
                    continue
                pseudo.setdefault(pick, []).append(max(sol.objective - bound, 0.0))
                if sol.bound >= best_obj - gap_abs:
                    continue
                cfrac = _fractionality(sol.values, instance.binary_idx)
                if np.max(cfrac) <= int_tol:
                    bits = {
                        k: int(round(sol.values[instance.binary_idx[k]]))
                        for k in range(len(instance.binary_idx))
                    }
                    try_integral(bits, warm=sol.values)
                else:
                    counter += 1
                    heapq.heappush(heap, (sol.bound, counter, child_over, sol.values))
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    best_bound = min([best_obj] + [h[0] for h in heap]) if heap else best_obj
    gap = (
        (best_obj - best_bound) / max(1.0, abs(best_obj))
        if best_x is not None
        else math.inf
    )
    if best_x is None:
        ran_out = status == "time_limit"
        return Solution(
            status="time_limit" if ran_out else "infeasible",
            values=None, objective=math.inf, gap=math.inf,
            nodes=nodes, solve_time=time.perf_counter() - t0,
            message="no integral assignment found"
            + (" within the limits" if ran_out else ""),
        )
    return Solution(
        status=status if status == "time_limit" else "optimal",
        values=best_x,
        objective=best_obj,
        gap=max(gap, 0.0),
        nodes=nodes,
        solve_time=time.perf_counter() - t0,
    )
