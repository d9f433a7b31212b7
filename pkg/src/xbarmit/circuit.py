"""Nodal analysis of the parasitic 1T1M crossbar read path.

Topology: each row ``i`` is driven by ``x[i] * v_read`` through ``r_in`` into
the top node ``T[i, 0]``; top nodes along a row are joined by ``r_wire``; the
cell (access transistor ``r_transistor`` in series with the memristor) links
``T[i, j]`` to the bottom node ``B[i, j]``; bottom nodes along a column are
joined by ``r_wire`` and ``B[n-1, j]`` is terminated through ``r_out`` into
virtual ground.

Zero resistances are handled by merging the nodes they join (a node merged
with a source or ground becomes a fixed-voltage node), so the ideal limit is
solved exactly instead of with a large stand-in conductance. The remaining
grounded conductance system is symmetric positive definite.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator, cg, splu

from .core import CrossbarConfig, check_matrix

log = logging.getLogger(__name__)

#: Largest cell count solved with a sparse direct factorization.
DIRECT_MAX_CELLS = 64 * 64


class CircuitError(RuntimeError):
    pass


class SingularCircuitError(CircuitError):
    pass


class ConvergenceError(CircuitError):
    pass


def device_current(g, u, beta: float):
    """Memristor current ``g*sinh(beta*u)/beta`` (``g*u`` when ``beta == 0``)."""
    if beta == 0:
        return g * u
    return g * np.sinh(beta * u) / beta


def device_slope(g, u, beta: float):
    """Small-signal conductance ``dI/du``."""
    if beta == 0:
        return g * np.ones_like(u)
    return g * np.cosh(beta * u)


@dataclass(frozen=True)
class SolveResult:
    column_currents: np.ndarray
    top_voltages: np.ndarray
    bottom_voltages: np.ndarray
    device_currents: np.ndarray
    device_drops: np.ndarray
    newton_iterations: int
    kcl_residual: float


class _Topology:
    """Node numbering, zero-resistance merging and the fixed (G-free) stamps."""

    def __init__(self, cfg: CrossbarConfig):
        n, m = cfg.rows, cfg.cols
        cells = n * m
        self.n, self.m = n, m
        T = np.arange(cells).reshape(n, m)
        B = cells + T
        self.has_mid = cfg.r_transistor > 0
        # device top terminal: an internal node when the transistor is resistive
        Dtop = 2 * cells + T if self.has_mid else T
        n_nodes = (3 if self.has_mid else 2) * cells
        src = n_nodes + np.arange(n)
        gnd = n_nodes + n
        total = gnd + 1
        self.T, self.B, self.Dtop = T, B, Dtop

        a, b, r = [], [], []

        def add(na, nb, res):
            na, nb = np.ravel(na), np.ravel(nb)
            a.append(na)
            b.append(nb)
            r.append(np.full(na.size, float(res)))

        add(src, T[:, 0], cfg.r_in)
        add(T[:, :-1], T[:, 1:], cfg.r_wire)
        add(B[:-1, :], B[1:, :], cfg.r_wire)
        add(B[-1, :], np.full(m, gnd), cfg.r_out)
        if self.has_mid:
            add(T, Dtop, cfg.r_transistor)
        a, b, r = np.concatenate(a), np.concatenate(b), np.concatenate(r)

        short = r == 0
        adj = sp.coo_matrix((np.ones(short.sum()), (a[short], b[short])), shape=(total, total))
        n_comp, label = connected_components(adj, directed=False)

        # which fixed terminal (source row, or -1 for ground) each component holds
        fixed_src = np.full(n_comp, -2, dtype=int)
        for node, tag in zip(np.append(src, gnd), np.append(np.arange(n), -1)):
            c = label[node]
            if fixed_src[c] != -2:
                raise CircuitError("zero-resistance path joins two fixed terminals")
            fixed_src[c] = tag
        is_fixed = fixed_src != -2
        self.n_unknown = int((~is_fixed).sum())
        self.uidx = np.where(is_fixed, -1, np.cumsum(~is_fixed) - 1)
        self.fidx = np.where(is_fixed, np.cumsum(is_fixed) - 1, -1)
        self.fixed_src = fixed_src[is_fixed]
        self.n_fixed = int(is_fixed.sum())
        self.label = label

        self.lin_a = label[a[~short]]
        self.lin_b = label[b[~short]]
        self.lin_g = 1.0 / r[~short]
        self.dev_a = label[Dtop.ravel()]
        self.dev_b = label[B.ravel()]
        self.r_out = cfg.r_out
        self.K_lin, self.Kf_lin = self.stamp(self.lin_a, self.lin_b, self.lin_g)

    def stamp(self, ca, cb, g, diagonal_only=False):
        """Assemble ``K`` (unknown x unknown) and ``Kf`` (unknown x fixed)."""
        keep = ca != cb
        ca, cb, g = ca[keep], cb[keep], g[keep]
        ua, ub = self.uidx[ca], self.uidx[cb]
        fa, fb = self.fidx[ca], self.fidx[cb]
        rows, cols, vals = [], [], []
        for u, w in ((ua, g), (ub, g)):
            sel = u >= 0
            rows.append(u[sel]); cols.append(u[sel]); vals.append(w[sel])
        if not diagonal_only:
            both = (ua >= 0) & (ub >= 0)
            rows += [ua[both], ub[both]]
            cols += [ub[both], ua[both]]
            vals += [-g[both], -g[both]]
        N = self.n_unknown
        K = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
        ).tocsr()
        s1 = (ua >= 0) & (fb >= 0)
        s2 = (ub >= 0) & (fa >= 0)
        Kf = sp.coo_matrix(
            (np.concatenate([-g[s1], -g[s2]]), (np.concatenate([ua[s1], ub[s2]]), np.concatenate([fb[s1], fa[s2]]))),
            shape=(N, self.n_fixed),
        ).tocsr()
        return K, Kf

    def fixed_voltages(self, v):
        """Fixed-node voltages for source vectors ``v`` of shape ``(..., n)``."""
        v = np.asarray(v, dtype=float)
        out = np.zeros(v.shape[:-1] + (self.n_fixed,))
        has = self.fixed_src >= 0
        out[..., has] = v[..., self.fixed_src[has]]
        return out

    def node_voltages(self, u, vf, comps):
        """Voltages of components ``comps``.

        ``u`` is ``(n_unknown,)`` or ``(n_unknown, T)``; ``vf`` matches it as
        ``(n_fixed,)`` or ``(n_fixed, T)``.
        """
        ui, fi = self.uidx[comps], self.fidx[comps]
        known = ui >= 0
        if u.ndim == 2:
            known = known[:, None]
        uu = u[np.maximum(ui, 0)] if u.shape[0] else np.zeros((ui.size,) + u.shape[1:])
        ff = vf[np.maximum(fi, 0)] if vf.shape[0] else np.zeros((fi.size,) + vf.shape[1:])
        return np.where(known, uu, ff)

    def inject(self, ca, cb, current, N):
        """Net current leaving each unknown node through branches a->b."""
        out = np.zeros(N)
        ua, ub = self.uidx[ca], self.uidx[cb]
        np.add.at(out, ua[ua >= 0], current[ua >= 0])
        np.add.at(out, ub[ub >= 0], -current[ub >= 0])
        return out


class CrossbarCircuit:
    """A crossbar with fixed conductances, solvable for any input vector.

    The linear (``beta == 0``) system is factorized once and reused across
    inputs; nonlinear devices are solved per input by Newton iteration on the
    Norton-linearized device stamps.
    """

    def __init__(self, cfg: CrossbarConfig, G, method: str = "auto",
                 newton_tol: float = 1e-9, max_newton_iters: int = 50,
                 cg_rtol: float = 1e-12, kcl_tol: float = 1e-12):
        self.cfg = cfg
        self.G = check_matrix(G, cfg)
        if np.any(self.G < 0):
            raise ValueError("conductances must be non-negative")
        if method == "auto":
            method = "direct" if cfg.rows * cfg.cols <= DIRECT_MAX_CELLS else "cg"
        if method not in ("direct", "cg"):
            raise ValueError(f"unknown method {method!r}")
        self.method = method
        self.newton_tol = newton_tol
        self.max_newton_iters = max_newton_iters
        self.cg_rtol = cg_rtol
        self.kcl_tol = kcl_tol
        self.topo = _Topology(cfg)
        self._g = self.G.ravel()
        self._linear = None

    # -- assembly -----------------------------------------------------------

    def _system(self, g_dev):
        topo = self.topo
        K_d, Kf_d = topo.stamp(topo.dev_a, topo.dev_b, g_dev)
        return topo.K_lin + K_d, topo.Kf_lin + Kf_d

    def system_matrix(self, u_dev=None):
        """Grounded conductance matrix at device drop ``u_dev`` (default 0)."""
        g = self._g if u_dev is None else device_slope(self._g, np.ravel(u_dev), self.cfg.beta)
        return self._system(g)[0]

    def _solver(self, K, g_dev):
        """Return a callable solving ``K u = rhs`` for 1-D or 2-D ``rhs``."""
        if K.shape[0] == 0:
            return lambda rhs: np.zeros(rhs.shape)
        if self.method == "direct":
            try:
                lu = splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise SingularCircuitError(f"crossbar system is singular: {exc}") from exc
            if not np.all(np.isfinite(lu.U.diagonal())) or np.any(lu.U.diagonal() == 0):
                raise SingularCircuitError("crossbar system is singular")
            return lu.solve
        # block preconditioner: wire chains with device stamps kept on the diagonal only
        topo = self.topo
        P = topo.K_lin + topo.stamp(topo.dev_a, topo.dev_b, g_dev, diagonal_only=True)[0]
        try:
            plu = splu(P.tocsc(), permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SingularCircuitError(f"crossbar system is singular: {exc}") from exc
        M = LinearOperator(K.shape, matvec=plu.solve, dtype=float)

        def solve(rhs):
            if rhs.ndim == 2:
                return np.column_stack([solve(col) for col in rhs.T])
            if not np.any(rhs):
                return np.zeros_like(rhs)
            u, info = cg(K, rhs, rtol=self.cg_rtol, atol=0.0, maxiter=10 * K.shape[0], M=M)
            if info != 0:
                raise ConvergenceError(f"CG did not converge (info={info})")
            return u

        return solve

    def _linear_factor(self):
        if self._linear is None:
            K, Kf = self._system(self._g)
            self._linear = (K, Kf, self._solver(K, self._g))
        return self._linear

    # -- solves -------------------------------------------------------------

    def _voltages(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.cfg.rows:
            raise ValueError(f"input length {x.shape[-1]} does not match {self.cfg.rows} rows")
        if not np.all(np.isfinite(x)):
            raise ValueError("input has non-finite entries")
        return x * self.cfg.v_read

    def _device_drops(self, u, vf):
        topo = self.topo
        va = topo.node_voltages(u, vf, topo.dev_a)
        vb = topo.node_voltages(u, vf, topo.dev_b)
        return va - vb

    def _residual(self, u, vf):
        """KCL residual (A) at every unknown node with true device currents."""
        topo = self.topo
        res = topo.K_lin @ u + topo.Kf_lin @ vf
        i_dev = device_current(self._g, self._device_drops(u, vf), self.cfg.beta)
        return res + topo.inject(topo.dev_a, topo.dev_b, i_dev, topo.n_unknown)

    def _solve_nonlinear(self, vf, u0):
        topo = self.topo
        beta = self.cfg.beta
        u = u0
        res_norm = np.linalg.norm(self._residual(u, vf)) if u.size else 0.0
        for it in range(1, self.max_newton_iters + 1):
            drop = self._device_drops(u, vf)
            g_eff = device_slope(self._g, drop, beta)
            j_eq = device_current(self._g, drop, beta) - g_eff * drop
            K, Kf = self._system(g_eff)
            rhs = -(Kf @ vf) - topo.inject(topo.dev_a, topo.dev_b, j_eq, topo.n_unknown)
            u_new = self._solver(K, g_eff)(rhs)
            du = u_new - u
            step = float(np.max(np.abs(du))) if du.size else 0.0
            trial = u + du
            trial_norm = np.linalg.norm(self._residual(trial, vf)) if u.size else 0.0
            if trial_norm > res_norm and step > self.newton_tol:
                trial = u + 0.5 * du
                trial_norm = np.linalg.norm(self._residual(trial, vf))
            u, res_norm = trial, trial_norm
            if step <= self.newton_tol:
                return u, it
        raise ConvergenceError(
            f"Newton did not converge in {self.max_newton_iters} iterations (last step {step:.3e} V)"
        )

    def _solve_unknowns(self, v):
        """Unknown-node voltages for one source vector; returns ``(u, vf, iters)``."""
        topo = self.topo
        vf = topo.fixed_voltages(v)
        K, Kf, solve = self._linear_factor()
        u = solve(-(Kf @ vf))
        iters = 0
        if self.cfg.beta > 0:
            u, iters = self._solve_nonlinear(vf, u)
        return u, vf, iters

    def _column_currents_from(self, u, vf):
        """Sensed currents; 2-D ``u``/``vf`` give shape ``(cols, T)``."""
        topo = self.topo
        n, m = self.cfg.rows, self.cfg.cols
        if topo.r_out > 0:
            return topo.node_voltages(u, vf, topo.label[topo.B[-1, :]]) / topo.r_out
        drops = self._device_drops(u, vf)
        g = self._g if drops.ndim == 1 else self._g[:, None]
        i_dev = device_current(g, drops, self.cfg.beta)
        return i_dev.reshape((n, m) + drops.shape[1:]).sum(axis=0)

    def solve(self, x) -> SolveResult:
        """Full solution (node voltages, device currents) for one input."""
        v = self._voltages(x)
        if v.ndim != 1:
            raise ValueError("solve() takes one input vector; use solve_batch for batches")
        u, vf, iters = self._solve_unknowns(v)
        topo = self.topo
        n, m = self.cfg.rows, self.cfg.cols
        top = topo.node_voltages(u, vf, topo.label[topo.T.ravel()]).reshape(n, m)
        bottom = topo.node_voltages(u, vf, topo.label[topo.B.ravel()]).reshape(n, m)
        dev_drop = self._device_drops(u, vf)
        i_dev = device_current(self._g, dev_drop, self.cfg.beta).reshape(n, m)
        res = self._residual(u, vf)
        kcl = float(np.max(np.abs(res))) if res.size else 0.0
        if kcl > self.kcl_tol:
            log.warning("KCL residual %.3e A exceeds tolerance %.1e A", kcl, self.kcl_tol)
        return SolveResult(
            column_currents=self._column_currents_from(u, vf),
            top_voltages=top,
            bottom_voltages=bottom,
            device_currents=i_dev,
            device_drops=top - bottom,
            newton_iterations=iters,
            kcl_residual=kcl,
        )

    def column_currents(self, X) -> np.ndarray:
        """Sensed column currents for a batch ``X`` of shape ``(T, rows)``.

        A single vector returns shape ``(cols,)``.
        """
        V = self._voltages(X)
        single = V.ndim == 1
        V = np.atleast_2d(V)
        topo = self.topo
        if self.cfg.beta == 0:
            K, Kf, solve = self._linear_factor()
            VF = topo.fixed_voltages(V)  # (T, n_fixed)
            rhs = -(Kf @ VF.T)
            U = solve(rhs).reshape(topo.n_unknown, -1) if topo.n_unknown else np.zeros((0, V.shape[0]))
            out = self._column_currents_from(U, VF.T).T
        else:
            out = np.empty((V.shape[0], self.cfg.cols))
            for t, v in enumerate(V):
                u, vf, _ = self._solve_unknowns(v)
                out[t] = self._column_currents_from(u, vf)
        return out[0] if single else out


def solve_crossbar(cfg: CrossbarConfig, G_actual, x, **kwargs) -> SolveResult:
    """Solve the parasitic crossbar with conductances ``G_actual`` for input ``x``."""
    return CrossbarCircuit(cfg, G_actual, **kwargs).solve(x)


def solve_batch(cfg: CrossbarConfig, G_actual, X, threads: int | None = None, **kwargs) -> list[SolveResult]:
    """``solve_crossbar`` for every row of ``X``; results keep the input order."""
    circuit = CrossbarCircuit(cfg, G_actual, **kwargs)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if threads and threads > 1:
        circuit._linear_factor()
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(circuit.solve, X))
    return [circuit.solve(x) for x in X]
