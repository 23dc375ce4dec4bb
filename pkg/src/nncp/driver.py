"""Alternating-update NNCP driver, sequential and grid-parallel.

Both execution modes run the same inner-iteration program; the parallel
mode layers the data distribution and collectives of an N-dimensional
worker grid on top (block Cartesian tensor partition, block row factor
partition, Reduce-Scatter / All-Gather on mode slices, All-Reduce for Gram
matrices and norms).  Factors stay column-normalized with the scale in the
weight vector; the relative error comes from the cached mode-N quantities
via  err^2 = (alpha - 2 beta + gamma) / alpha  with alpha = ||X||^2,
beta = <M_N, Hhat_N>, gamma = lam^T (S_N * G_N) lam.

Timed regions cover local computation only; each collective books its own
wall time, so the per-category columns never overlap.
"""

from __future__ import annotations

import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .dimtree import DimTreeContext, DimTreePlan
from .grid import CommCounters, Grid, Worker, block_partition
from .tensor_ops import (
    DenseTensor,
    FactorSet,
    hadamard_grams_excluding,
    matrix_inner_product,
    naive_mttkrp,
)
from .updaters import (
    UpdateInputs,
    UpdaterState,
    admm_update,
    bpp_update,
    hals_update,
    local_reduce,
    mu_update,
    nesterov_update,
    ucp_update,
)

__all__ = [
    "ALGORITHMS",
    "CATEGORIES",
    "RunConfig",
    "RunReport",
    "init_factor",
    "nncp_parallel",
    "nncp_sequential",
    "record_category",
    "relative_error",
]

CATEGORIES = (
    "MTTKRP",
    "KRP",
    "MultiTTV",
    "Gram",
    "NNLS",
    "ReduceScatter",
    "AllGather",
    "AllReduce",
    "Error",
)

ALGORITHMS = ("ucp", "mu", "hals", "bpp", "admm", "nes")


@dataclass
class RunConfig:
    """Knobs of one decomposition run."""

    rank: int
    algorithm: str = "bpp"
    max_iters: int = 100
    tol: float = 1e-6
    seed: int = 0
    grid: tuple = None
    use_dimtree: bool = True
    strict_split: bool = False
    initial_factors: FactorSet = None

    def validate(self, order: int):
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if self.tol < 0:
            raise ValueError("tolerance must be nonnegative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.grid is not None and len(self.grid) != order:
            raise ValueError(
                f"grid order {len(self.grid)} does not match tensor order {order}"
            )
        if self.initial_factors is not None and self.initial_factors.rank != self.rank:
            raise ValueError("initial factors disagree with configured rank")


@dataclass
class RunReport:
    """Per-iteration error curve plus timing and communication breakdown.

    Row 0 describes the initial model; row i the state after outer
    iteration i.  ``rows[i]`` maps each category to seconds, ``row_words``
    counts words moved by collectives, ``row_wall`` is the row's wall time.
    """

    errors: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    row_words: list = field(default_factory=list)
    row_wall: list = field(default_factory=list)
    counters: CommCounters = field(default_factory=CommCounters)
    model: FactorSet = None
    converged: bool = False
    split_mode: int = None
    tree_partial_calls: int = 0

    def begin_row(self):
        self.rows.append({c: 0.0 for c in CATEGORIES})
        self.row_words.append(0)
        self.row_wall.append(0.0)


def record_category(report: RunReport, category: str, elapsed: float, words: int = 0):
    """Accumulate one timed event into the report's current row."""
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}")
    report.rows[-1][category] += elapsed
    report.row_words[-1] += words


def init_factor(seed: int, mode: int, rows: int, rank: int) -> np.ndarray:
    """Uniform [0,1) factor from a counter-based generator keyed by
    (seed, mode); entry (i, r) is draw i*rank + r, so any row block of the
    same global matrix can be reproduced on any worker."""
    key = np.array([np.uint64(seed), np.uint64(mode)], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.random((rows, rank))


def _eps_from_terms(alpha: float, beta: float, gamma: float) -> float:
    # the radicand is a difference of nearly equal numbers near convergence
    return float(np.sqrt(max(0.0, alpha - 2.0 * beta + gamma) / alpha))


def relative_error(alpha, mttkrp_n, h_n_unnormalized, s_n, g_n, lam) -> float:
    """Relative error from mode-N quantities of the same outer sweep.

    beta = <M_N, Hhat_N> with the pre-normalization factor, and
    gamma = lam' (S_N * G_N) lam; the clamped radicand guards against
    cancellation.
    """
    if alpha <= 0.0:
        raise ValueError("zero tensor has no relative error")
    beta = matrix_inner_product(mttkrp_n, h_n_unnormalized)
    gamma = float(lam @ ((s_n * g_n) @ lam))
    return _eps_from_terms(alpha, beta, gamma)


def _make_updater(cfg: RunConfig, order: int):
    """Per-run update dispatcher holding one UpdaterState per mode."""
    states = [UpdaterState() for _ in range(order)]
    algo = cfg.algorithm

    def update(mode: int, inputs: UpdateInputs, hook):
        if algo == "ucp":
            return ucp_update(inputs)
        if algo == "mu":
            return mu_update(inputs)
        if algo == "hals":
            return hals_update(inputs, hook)
        if algo == "bpp":
            return bpp_update(inputs)
        if algo == "admm":
            return admm_update(inputs, states[mode], hook)
        return nesterov_update(inputs, states[mode], hook)

    return update, states


class _SequentialRuntime:
    """Single-context execution: every collective is the identity."""

    parallel = False

    def __init__(self, x: DenseTensor, cfg: RunConfig):
        self.x_local = x
        self.dims = x.dims
        self.counters = CommCounters()
        self.report = RunReport()

    def record(self, category, elapsed, words=0):
        record_category(self.report, category, elapsed, words)

    def owned_rows(self, mode) -> slice:
        return slice(0, self.dims[mode])

    def slice_rows(self, mode) -> slice:
        return slice(0, self.dims[mode])

    def all_reduce(self, value, op="sum"):
        return local_reduce(value, op)

    def scatter_to_owned(self, mode, marr):
        return marr

    def gather_to_slice(self, mode, h_owned):
        return h_owned

    hook = staticmethod(local_reduce)


class _WorkerRuntime:
    """Per-worker execution over the block-distributed tensor."""

    parallel = True

    def __init__(self, worker: Worker, x: DenseTensor, cfg: RunConfig):
        self.worker = worker
        self.counters = worker.counters
        self.report = RunReport()
        worker.recorder = lambda cat, dt: record_category(self.report, cat, dt)
        grid = worker.grid
        self.groups = [
            grid.slice_group(n, worker.coord[n]) for n in range(len(grid.shape))
        ]
        # tensor block: the mode-n range is fixed by the n-th coordinate
        tensor_maps = [block_partition(i, p) for i, p in zip(x.dims, grid.shape)]
        self._slice_rows = [m.block(c) for m, c in zip(tensor_maps, worker.coord)]
        self.x_local = DenseTensor.from_array(x.as_array()[tuple(self._slice_rows)])
        self.dims = self.x_local.dims
        # owned factor rows: sub-partition of the slice block among the
        # slice group, in ascending rank order
        self._owned_rows = []
        self.owned_parts = []
        for n, s in enumerate(self._slice_rows):
            group = self.groups[n]
            parts = block_partition(s.stop - s.start, group.size)
            local = parts.block(group.index[worker.rank])
            self._owned_rows.append(slice(s.start + local.start, s.start + local.stop))
            self.owned_parts.append(parts)

    def record(self, category, elapsed, words=0):
        record_category(self.report, category, elapsed, words)

    def owned_rows(self, mode) -> slice:
        return self._owned_rows[mode]

    def slice_rows(self, mode) -> slice:
        return self._slice_rows[mode]

    def all_reduce(self, value, op="sum"):
        return self.worker.all_reduce(self.worker.grid.all_procs, value, op)

    def scatter_to_owned(self, mode, marr):
        return self.worker.reduce_scatter(
            self.groups[mode], marr, self.owned_parts[mode]
        )

    def gather_to_slice(self, mode, h_owned):
        return self.worker.all_gather(self.groups[mode], h_owned)

    @property
    def hook(self):
        return self.all_reduce


@contextmanager
def _clock(rt, category):
    t0 = time.perf_counter()
    yield
    rt.record(category, time.perf_counter() - t0)


def _initial_factors(rt, cfg: RunConfig, global_dims):
    """Owned and slice-replicated factor blocks, identical global values
    for every distribution."""
    owned, shared = [], []
    for n, size in enumerate(global_dims):
        if cfg.initial_factors is not None:
            full = np.asarray(cfg.initial_factors.factors[n], dtype=np.float64)
            if full.shape != (size, cfg.rank):
                raise ValueError(f"initial factor {n} has shape {full.shape}")
        else:
            full = init_factor(cfg.seed, n, size, cfg.rank)
        owned.append(full[rt.owned_rows(n)].copy())
        shared.append(full[rt.slice_rows(n)].copy())
    lam = (
        cfg.initial_factors.lam.copy()
        if cfg.initial_factors is not None
        else np.ones(cfg.rank)
    )
    return owned, shared, lam


def _last_mode_mttkrp(rt, ctx, shared, use_naive: bool):
    """Out-of-band mode-N MTTKRP on the local block (error evaluations)."""
    last = len(shared) - 1
    if ctx is not None and not use_naive:
        return ctx.mttkrp_last_mode(rt.x_local, shared)
    with _clock(rt, "MTTKRP"):
        return naive_mttkrp(rt.x_local, shared, last)


def _model_error(rt, ctx, shared, owned, lam, alpha, use_naive: bool):
    """Relative error of an arbitrary (possibly unnormalized) model.

    Costs one extra MTTKRP; the inner product pairs local contributions
    with the slice-replicated rows, so no Reduce-Scatter is needed.
    """
    mbar = _last_mode_mttkrp(rt, ctx, shared, use_naive)
    with _clock(rt, "Error"):
        beta_local = matrix_inner_product(mbar, shared[-1] * lam)
    beta = rt.all_reduce(beta_local)
    grams = []
    for h in owned:
        with _clock(rt, "Gram"):
            gbar = h.T @ h
        grams.append(rt.all_reduce(gbar))
    with _clock(rt, "Error"):
        gamma = float(lam @ (np.prod(grams, axis=0) @ lam))
        eps = _eps_from_terms(alpha, beta, gamma)
    return eps


def _run_spmd(rt, cfg: RunConfig, global_dims):
    """One worker's program; sequential execution is the P=1 special case."""
    order = len(global_dims)
    rank = cfg.rank
    report = rt.report
    update, _ = _make_updater(cfg, order)

    # -- initialization ----------------------------------------------------
    report.begin_row()
    wall0 = time.perf_counter()
    with _clock(rt, "Error"):
        alpha_local = rt.x_local.norm_squared()
    alpha = rt.all_reduce(alpha_local)
    if alpha <= 0.0:
        raise ValueError("zero tensor has no relative error")

    owned, shared, lam = _initial_factors(rt, cfg, global_dims)
    grams = []
    for n in range(order):
        with _clock(rt, "Gram"):
            gbar = owned[n].T @ owned[n]
        g = rt.all_reduce(gbar)
        grams.append(0.5 * (g + g.T))
        shared[n] = rt.gather_to_slice(n, owned[n])

    ctx = None
    if cfg.use_dimtree:
        plan = DimTreePlan.create(rt.dims, rank, cfg.strict_split)
        ctx = DimTreeContext(plan, recorder=rt.record)
        report.split_mode = plan.split

    # initial model error (out-of-band MTTKRP, not part of the tree sweep)
    mbar0 = _last_mode_mttkrp(rt, None, shared, use_naive=True)
    with _clock(rt, "Error"):
        beta_local = matrix_inner_product(mbar0, shared[-1] * lam)
    beta0 = rt.all_reduce(beta_local)
    with _clock(rt, "Error"):
        gamma0 = float(lam @ (np.prod(grams, axis=0) @ lam))
        eps0 = _eps_from_terms(alpha, beta0, gamma0)
    errors = [eps0]
    report.errors = errors
    report.row_wall[-1] = time.perf_counter() - wall0
    report.row_words[-1] = rt.counters.total_words()

    prev_owned = prev_shared = prev_lam = None
    m_last = hhat_last = s_last = None

    # -- outer iterations ----------------------------------------------------
    converged = False
    for it in range(1, cfg.max_iters + 1):
        report.begin_row()
        wall0 = time.perf_counter()
        if cfg.algorithm == "nes":
            prev_owned = [h.copy() for h in owned]
            prev_shared = [h.copy() for h in shared]
            prev_lam = lam.copy()
        if ctx is not None:
            ctx.begin_iteration()
        for n in range(order):
            if ctx is not None:
                mbar = ctx.mttkrp(rt.x_local, shared, n)
            else:
                with _clock(rt, "MTTKRP"):
                    mbar = naive_mttkrp(rt.x_local, shared, n)
            m_owned = rt.scatter_to_owned(n, mbar)
            with _clock(rt, "Gram"):
                s_n = hadamard_grams_excluding(grams, n)
            try:
                # stateful updaters communicate through the hook; keep that
                # time out of the NNLS column by netting the AllReduce delta
                ar0 = report.rows[-1]["AllReduce"]
                t0 = time.perf_counter()
                inputs = UpdateInputs(s_n, m_owned, owned[n] * lam)
                hhat = update(n, inputs, rt.hook)
                elapsed = time.perf_counter() - t0
                rt.record("NNLS", elapsed - (report.rows[-1]["AllReduce"] - ar0))
            except Exception as exc:
                raise RuntimeError(
                    f"NNLS update failed at iteration {it}, mode {n + 1}"
                ) from exc
            # column norms are global: reduce squared norms, then scale
            with _clock(rt, "NNLS"):
                nsq_local = np.sum(hhat * hhat, axis=0)
            nsq = rt.all_reduce(nsq_local)
            with _clock(rt, "NNLS"):
                w = np.sqrt(nsq)
                owned[n] = hhat / np.where(w > 0.0, w, 1.0)
                lam = w
            with _clock(rt, "Gram"):
                gbar = owned[n].T @ owned[n]
            g = rt.all_reduce(gbar)
            grams[n] = 0.5 * (g + g.T)
            shared[n] = rt.gather_to_slice(n, owned[n])
            if n == order - 1:
                m_last, hhat_last, s_last = m_owned, hhat, s_n

        with _clock(rt, "Error"):
            beta_local = matrix_inner_product(m_last, hhat_last)
        beta = rt.all_reduce(beta_local)
        with _clock(rt, "Error"):
            gamma = float(lam @ ((s_last * grams[-1]) @ lam))
            eps = _eps_from_terms(alpha, beta, gamma)
        errors.append(eps)

        if cfg.algorithm == "nes":
            owned, shared, lam = _nes_accelerate(
                rt, ctx, cfg, it, eps, alpha, grams,
                owned, shared, lam, prev_owned, prev_shared, prev_lam,
            )

        report.row_wall[-1] = time.perf_counter() - wall0
        report.row_words[-1] = rt.counters.total_words() - sum(report.row_words[:-1])
        if eps <= cfg.tol:
            converged = True
            break

    report.converged = converged
    report.tree_partial_calls = ctx.partial_calls if ctx is not None else 0
    return owned, lam


def _nes_accelerate(
    rt, ctx, cfg, it, eps, alpha, grams,
    owned, shared, lam, prev_owned, prev_shared, prev_lam,
):
    """Outer extrapolation step; refreshes grams in place when accepted.

    The candidate H_i + s_i (H_i - H_{i-1}) with s_i = i^(1/N) is clamped
    at zero to stay feasible and replaces the current iterate only when
    its relative error is strictly lower (one extra MTTKRP to find out).
    """
    with _clock(rt, "Error"):
        step = float(it) ** (1.0 / len(owned))
        cand_owned = [
            np.maximum(h + step * (h - hp), 0.0) for h, hp in zip(owned, prev_owned)
        ]
        cand_shared = [
            np.maximum(h + step * (h - hp), 0.0) for h, hp in zip(shared, prev_shared)
        ]
        cand_lam = np.maximum(lam + step * (lam - prev_lam), 0.0)
    cand_eps = _model_error(
        rt, ctx, cand_shared, cand_owned, cand_lam, alpha,
        use_naive=not cfg.use_dimtree,
    )
    if not cand_eps < eps:
        return owned, shared, lam
    # accepted: renormalize columns globally and refresh the Gram matrices
    with _clock(rt, "Error"):
        nsq_local = np.stack([np.sum(h * h, axis=0) for h in cand_owned])
    nsq = rt.all_reduce(nsq_local)
    with _clock(rt, "Error"):
        w = np.sqrt(nsq)
        scale = np.where(w > 0.0, w, 1.0)
        owned = [h / scale[n] for n, h in enumerate(cand_owned)]
        shared = [h / scale[n] for n, h in enumerate(cand_shared)]
        lam = cand_lam * np.prod(w, axis=0)
    for n in range(len(owned)):
        with _clock(rt, "Gram"):
            gbar = owned[n].T @ owned[n]
        g = rt.all_reduce(gbar)
        grams[n] = 0.5 * (g + g.T)
    return owned, shared, lam


def nncp_sequential(x: DenseTensor, cfg: RunConfig) -> RunReport:
    """Alternating-update NNCP in a single execution context."""
    cfg.validate(x.order)
    if cfg.grid is not None and int(np.prod(cfg.grid)) != 1:
        raise ValueError("sequential driver got a nontrivial grid; use nncp_parallel")
    _warn_if_negative(x, cfg)
    rt = _SequentialRuntime(x, cfg)
    owned, lam = _run_spmd(rt, cfg, x.dims)
    rt.report.model = FactorSet(owned, lam)
    rt.report.counters = rt.counters
    return rt.report


def nncp_parallel(x: DenseTensor, cfg: RunConfig) -> RunReport:
    """Grid-parallel decomposition over simulated workers; semantically
    equivalent to the sequential driver for identical seeds."""
    cfg.validate(x.order)
    if cfg.grid is None:
        raise ValueError("parallel driver needs a grid shape")
    for n, (i, p) in enumerate(zip(x.dims, cfg.grid)):
        if p > i:
            raise ValueError(
                f"grid dim {p} exceeds tensor dim {i} in mode {n + 1}; "
                "every worker must hold a nonempty tensor block"
            )
    _warn_if_negative(x, cfg)
    grid = Grid(cfg.grid)

    def program(worker):
        rt = _WorkerRuntime(worker, x, cfg)
        owned, lam = _run_spmd(rt, cfg, x.dims)
        rt.report.counters = rt.counters
        rows = [rt.owned_rows(n) for n in range(x.order)]
        return rt.report, owned, lam, rows

    results = grid.run(program)
    return _merge_reports(results, x.dims, cfg.rank)


def _merge_reports(results, dims, rank) -> RunReport:
    """Assemble the global model and fold per-worker breakdowns together.

    Category seconds and wall time become per-worker averages, which keeps
    the rows internally additive (a max over workers would mix different
    critical paths and could exceed any single worker's wall time); words
    and counters sum across workers.
    """
    merged = RunReport()
    first = results[0][0]
    nworkers = len(results)
    merged.errors = list(first.errors)
    merged.split_mode = first.split_mode
    merged.converged = first.converged
    merged.tree_partial_calls = first.tree_partial_calls
    for report, _, _, _ in results:
        if not np.allclose(report.errors, first.errors, rtol=0, atol=1e-12):
            raise AssertionError("workers disagree on the error sequence")
    for k in range(len(first.rows)):
        merged.begin_row()
        for cat in CATEGORIES:
            merged.rows[k][cat] = sum(r.rows[k][cat] for r, _, _, _ in results) / nworkers
        merged.row_words[k] = sum(r.row_words[k] for r, _, _, _ in results)
        merged.row_wall[k] = sum(r.row_wall[k] for r, _, _, _ in results) / nworkers
    counters = CommCounters()
    for report, _, _, _ in results:
        counters = counters.merged_with(report.counters)
    merged.counters = counters

    factors = [np.zeros((i, rank)) for i in dims]
    for _, owned, _, rows in results:
        for n, (h, s) in enumerate(zip(owned, rows)):
            factors[n][s] = h
    merged.model = FactorSet(factors, results[0][2])
    return merged


def _warn_if_negative(x: DenseTensor, cfg: RunConfig):
    if cfg.algorithm != "ucp" and float(x.data.min()) < 0.0:
        warnings.warn("tensor has negative entries; nonnegative model will not fit")
