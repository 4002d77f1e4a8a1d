"""No-U-Turn Sampler with step-size and diagonal metric adaptation.

Multinomial NUTS with the generalized no-U-turn criterion, including the
extra checks across merged subtrees. Warmup uses dual averaging for the step
size and windowed estimation of a diagonal inverse metric (a fast initial
buffer, doubling slow windows, a terminal buffer), so the metric in force
after warmup comes from the last and longest window.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

LogDensity = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class InitializationError(RuntimeError):
    pass


@dataclass
class SamplerSettings:
    chains: int = 4
    warmup: int = 500
    samples: int = 500
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    max_delta_h: float = 1000.0
    threads: Optional[int] = None

    def __post_init__(self):
        for name in ("chains", "samples", "max_tree_depth"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.init_radius <= 0:
            raise ValueError("init_radius must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PosteriorDraws:
    """Draws from all chains.

    ``values`` has shape ``(chains, samples, len(names))``; ``latent`` (if
    recorded) has shape ``(chains, samples, ...)``.
    """

    names: list[str]
    values: np.ndarray
    lp: np.ndarray
    divergent: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    accept_stat: np.ndarray
    step_size: np.ndarray
    inv_metric: np.ndarray
    latent: Optional[np.ndarray] = None
    warmup_divergences: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def n_chains(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]

    def get(self, name: str) -> np.ndarray:
        """``(chains, samples)`` array for one named quantity."""
        try:
            j = self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown parameter {name!r}") from None
        return self.values[:, :, j]

    def divergence_rate(self) -> float:
        return float(np.mean(self.divergent))


# --------------------------------------------------------------------------
# adaptation


class DualAveraging:
    def __init__(self, target: float, gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.restart(1.0)

    def restart(self, step_size: float):
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        w = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - w) * self.x_bar + w * x
        return math.exp(x)

    def final(self) -> float:
        return math.exp(self.x_bar)


class WindowedVariance:
    """Diagonal metric estimation over doubling windows."""

    def __init__(self, dim: int, warmup: int, init_buffer: int = 75, term_buffer: int = 50, window: int = 25):
        self.warmup = warmup
        if warmup < 20:
            # too short to adapt the metric at all
            init_buffer, term_buffer, window = warmup, 0, 0
        elif init_buffer + window + term_buffer > warmup:
            init_buffer = int(0.15 * warmup)
            term_buffer = int(0.1 * warmup)
            window = warmup - init_buffer - term_buffer
        self.init_buffer, self.term_buffer, self.window = init_buffer, term_buffer, window
        self.counter = 0
        self.next_window = init_buffer + window - 1
        self._reset(dim)

    def _reset(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def _in_window(self) -> bool:
        return (
            self.window > 0
            and self.counter >= self.init_buffer
            and self.counter < self.warmup - self.term_buffer
            and self.counter != self.warmup
        )

    def _window_end(self) -> bool:
        return self.window > 0 and self.counter == self.next_window and self.counter != self.warmup

    def _advance_window(self):
        last = self.warmup - self.term_buffer - 1
        if self.next_window == last:
            return
        self.window *= 2
        self.next_window = self.counter + self.window
        if self.next_window != last and self.next_window + 2 * self.window >= self.warmup - self.term_buffer:
            self.next_window = last

    def learn(self, q: np.ndarray) -> Optional[np.ndarray]:
        """Record a warmup draw; returns a new inverse metric at window ends."""
        if self._in_window():
            self.n += 1
            delta = q - self.mean
            self.mean += delta / self.n
            self.m2 += delta * (q - self.mean)
        if self._window_end():
            self._advance_window()
            n = self.n
            var = self.m2 / max(n - 1, 1)
            # shrink toward a small constant, as the window may be short
            var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            self._reset(q.shape[0])
            self.counter += 1
            return var
        self.counter += 1
        return None


# --------------------------------------------------------------------------
# NUTS


@dataclass
class _State:
    q: np.ndarray
    p: np.ndarray
    grad: np.ndarray
    lp: float


@dataclass
class _Tree:
    left: _State
    right: _State
    ps_left: np.ndarray
    ps_right: np.ndarray
    rho: np.ndarray
    log_w: float
    proposal: _State


class _Chain:
    def __init__(self, target: LogDensity, dim: int, settings: SamplerSettings, rng: np.random.Generator):
        self.target = target
        self.dim = dim
        self.s = settings
        self.rng = rng
        self.inv_metric = np.ones(dim)
        self.step_size = 1.0

    # -- dynamics

    def kinetic(self, p: np.ndarray) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            return 0.5 * float(p @ (self.inv_metric * p))

    def momentum(self) -> np.ndarray:
        return self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)

    def leapfrog(self, z: _State, eps: float) -> _State:
        p = z.p + 0.5 * eps * z.grad
        q = z.q + eps * self.inv_metric * p
        lp, grad = self.target(q)
        p = p + 0.5 * eps * grad
        return _State(q, p, grad, lp)

    def hamiltonian(self, z: _State) -> float:
        h = -z.lp + self.kinetic(z.p)
        return h if math.isfinite(h) else math.inf

    @staticmethod
    def _no_uturn(ps_a: np.ndarray, ps_b: np.ndarray, rho: np.ndarray) -> bool:
        return float(ps_a @ rho) > 0 and float(ps_b @ rho) > 0

    def _merge_ok(self, left: _Tree, right: _Tree, rho: np.ndarray) -> bool:
        return (
            self._no_uturn(left.ps_left, right.ps_right, rho)
            and self._no_uturn(left.ps_left, right.ps_left, left.rho + right.left.p)
            and self._no_uturn(left.ps_right, right.ps_right, right.rho + left.right.p)
        )

    def build(self, start: _State, depth: int, eps: float, h0: float) -> Optional[_Tree]:
        if depth == 0:
            z = self.leapfrog(start, eps)
            self.n_leapfrog += 1
            h = self.hamiltonian(z)
            self.sum_metro += math.exp(min(0.0, h0 - h)) if math.isfinite(h) else 0.0
            if h - h0 > self.s.max_delta_h:
                self.divergent = True
                return None
            ps = self.inv_metric * z.p
            return _Tree(z, z, ps, ps, z.p.copy(), h0 - h, z)
        init = self.build(start, depth - 1, eps, h0)
        if init is None:
            return None
        edge = init.right if eps > 0 else init.left
        final = self.build(edge, depth - 1, eps, h0)
        if final is None:
            return None
        log_w = float(np.logaddexp(init.log_w, final.log_w))
        proposal = final.proposal if self.rng.uniform() < math.exp(final.log_w - log_w) else init.proposal
        left, right = (init, final) if eps > 0 else (final, init)
        rho = left.rho + right.rho
        if not self._merge_ok(left, right, rho):
            return None
        return _Tree(left.left, right.right, left.ps_left, right.ps_right, rho, log_w, proposal)

    def transition(self, z0: _State) -> tuple[_State, dict]:
        eps = self.step_size
        z0 = _State(z0.q, self.momentum(), z0.grad, z0.lp)
        h0 = self.hamiltonian(z0)
        ps0 = self.inv_metric * z0.p
        tree = _Tree(z0, z0, ps0, ps0, z0.p.copy(), 0.0, z0)
        sample = z0
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False
        depth = 0
        while depth < self.s.max_tree_depth:
            forward = self.rng.uniform() > 0.5
            if forward:
                sub = self.build(tree.right, depth, eps, h0)
            else:
                sub = self.build(tree.left, depth, -eps, h0)
            if sub is None:
                break
            depth += 1
            # biased progressive sampling favours the new subtree
            if sub.log_w > tree.log_w or self.rng.uniform() < math.exp(sub.log_w - tree.log_w):
                sample = sub.proposal
            left, right = (tree, sub) if forward else (sub, tree)
            rho = left.rho + right.rho
            log_w = float(np.logaddexp(tree.log_w, sub.log_w))
            ok = self._merge_ok(left, right, rho)
            tree = _Tree(left.left, right.right, left.ps_left, right.ps_right, rho, log_w, sample)
            if not ok:
                break
        stats = {
            "accept_stat": self.sum_metro / max(self.n_leapfrog, 1),
            "tree_depth": depth,
            "n_leapfrog": self.n_leapfrog,
            "divergent": self.divergent,
        }
        return _State(sample.q, sample.p, sample.grad, sample.lp), stats

    # -- warmup helpers

    def init_step_size(self, z: _State):
        """Double or halve the step size until one leapfrog step crosses 80% acceptance."""
        eps = self.step_size
        log_target = math.log(0.8)
        direction = 0
        for _ in range(100):
            z0 = _State(z.q, self.momentum(), z.grad, z.lp)
            h0 = self.hamiltonian(z0)
            z1 = self.leapfrog(z0, eps)
            delta = h0 - self.hamiltonian(z1)
            if direction == 0:
                direction = 1 if delta > log_target else -1
            elif (direction == 1 and not delta > log_target) or (direction == -1 and not delta < log_target):
                break
            eps = eps * 2.0 if direction == 1 else eps * 0.5
            if eps > 1e7 or eps < 1e-12:
                break
        self.step_size = eps

    def initial_state(self, init: Optional[np.ndarray]) -> _State:
        if init is not None:
            q = np.asarray(init, dtype=float).copy()
            lp, grad = self.target(q)
            if math.isfinite(lp) and np.all(np.isfinite(grad)):
                return _State(q, np.zeros(self.dim), grad, lp)
            raise InitializationError("supplied initial point has non-finite log density")
        r = self.s.init_radius
        for _ in range(100):
            q = self.rng.uniform(-r, r, self.dim)
            lp, grad = self.target(q)
            if math.isfinite(lp) and np.all(np.isfinite(grad)):
                return _State(q, np.zeros(self.dim), grad, lp)
        raise InitializationError("no finite initial point found in 100 attempts")


@dataclass
class ChainResult:
    draws: np.ndarray
    lp: np.ndarray
    divergent: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    accept_stat: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    warmup_divergences: int
    latent: Optional[np.ndarray] = None


def run_chain(
    target: LogDensity,
    dim: int,
    settings: SamplerSettings,
    chain_id: int,
    init: Optional[np.ndarray] = None,
    transform: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    latent: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> ChainResult:
    """Run warmup and sampling for one chain seeded with ``seed + chain_id``."""
    rng = np.random.default_rng(settings.seed + chain_id)
    chain = _Chain(target, dim, settings, rng)
    z = chain.initial_state(init)
    chain.init_step_size(z)
    da = DualAveraging(settings.target_accept)
    da.restart(chain.step_size)
    windows = WindowedVariance(dim, settings.warmup)
    warm_div = 0
    for it in range(settings.warmup):
        z, st = chain.transition(z)
        warm_div += int(st["divergent"])
        chain.step_size = da.update(st["accept_stat"])
        var = windows.learn(z.q)
        if var is not None:
            chain.inv_metric = var
            chain.init_step_size(z)
            da.restart(chain.step_size)
    if settings.warmup > 0:
        chain.step_size = da.final()

    n = settings.samples
    out = ChainResult(
        draws=None,
        lp=np.empty(n),
        divergent=np.zeros(n, dtype=bool),
        tree_depth=np.zeros(n, dtype=int),
        n_leapfrog=np.zeros(n, dtype=int),
        accept_stat=np.empty(n),
        step_size=chain.step_size,
        inv_metric=chain.inv_metric.copy(),
        warmup_divergences=warm_div,
    )
    rows, lat = [], []
    for it in range(n):
        z, st = chain.transition(z)
        rows.append(transform(z.q) if transform is not None else z.q.copy())
        if latent is not None:
            lat.append(latent(z.q))
        out.lp[it] = z.lp
        out.divergent[it] = st["divergent"]
        out.tree_depth[it] = st["tree_depth"]
        out.n_leapfrog[it] = st["n_leapfrog"]
        out.accept_stat[it] = st["accept_stat"]
    out.draws = np.asarray(rows)
    out.latent = np.asarray(lat) if latent is not None else None
    logger.info(
        "chain %d: step size %.3g, mean tree depth %.2f, %d divergences",
        chain_id,
        out.step_size,
        out.tree_depth.mean(),
        int(out.divergent.sum()),
    )
    return out


def default_threads() -> int:
    env = os.environ.get("KRONGP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def nuts_sample(
    target: LogDensity,
    dim: int,
    settings: SamplerSettings = SamplerSettings(),
    init: Optional[Sequence[np.ndarray]] = None,
    names: Optional[list[str]] = None,
    transform: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    latent: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> PosteriorDraws:
    """Sample ``target`` (returns log density and gradient) with NUTS.

    ``transform`` maps an unconstrained draw to the stored values (identity
    by default) and ``latent`` to an optional per-draw array. Chains run in
    worker processes when ``settings.threads`` allows more than one; results
    do not depend on the number of workers.
    """
    threads = settings.threads or default_threads()
    threads = max(1, min(threads, settings.chains))
    inits = list(init) if init is not None else [None] * settings.chains
    args = [(target, dim, settings, c, inits[c], transform, latent) for c in range(settings.chains)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_chain_star, args))
    else:
        results = [run_chain(*a) for a in args]
    values = np.stack([r.draws for r in results])
    if names is None:
        names = [f"theta[{i + 1}]" for i in range(values.shape[2])]
    return PosteriorDraws(
        names=list(names),
        values=values,
        lp=np.stack([r.lp for r in results]),
        divergent=np.stack([r.divergent for r in results]),
        tree_depth=np.stack([r.tree_depth for r in results]),
        n_leapfrog=np.stack([r.n_leapfrog for r in results]),
        accept_stat=np.stack([r.accept_stat for r in results]),
        step_size=np.array([r.step_size for r in results]),
        inv_metric=np.stack([r.inv_metric for r in results]),
        latent=np.stack([r.latent for r in results]) if latent is not None else None,
        warmup_divergences=np.array([r.warmup_divergences for r in results]),
    )


def _run_chain_star(args):
    return run_chain(*args)


# --------------------------------------------------------------------------
# persistence

_STAT_COLUMNS = ("lp__", "accept_stat__", "stepsize__", "treedepth__", "n_leapfrog__", "divergent__")


def write_draws(draws: PosteriorDraws, out_dir, prefix: str = "draws") -> list:
    """Write one CSV per chain: sampler statistics, then one column per named quantity."""
    import pandas as pd
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in range(draws.n_chains):
        cols = {
            "lp__": draws.lp[c],
            "accept_stat__": draws.accept_stat[c],
            "stepsize__": np.full(draws.n_samples, draws.step_size[c]),
            "treedepth__": draws.tree_depth[c],
            "n_leapfrog__": draws.n_leapfrog[c],
            "divergent__": draws.divergent[c].astype(int),
        }
        frame = pd.DataFrame(cols)
        values = pd.DataFrame(draws.values[c], columns=draws.names)
        frame = pd.concat([frame, values], axis=1)
        path = out / f"{prefix}_chain{c + 1}.csv"
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        paths.append(path)
    return paths


def read_draws(paths) -> PosteriorDraws:
    """Inverse of :func:`write_draws` (latent draws and metrics are not stored)."""
    import pandas as pd

    frames = [pd.read_csv(p, float_precision="round_trip") for p in paths]
    if not frames:
        raise ValueError("no draw files given")
    names = [c for c in frames[0].columns if c not in _STAT_COLUMNS]
    return PosteriorDraws(
        names=names,
        values=np.stack([f[names].to_numpy(dtype=float) for f in frames]),
        lp=np.stack([f["lp__"].to_numpy() for f in frames]),
        divergent=np.stack([f["divergent__"].to_numpy().astype(bool) for f in frames]),
        tree_depth=np.stack([f["treedepth__"].to_numpy() for f in frames]),
        n_leapfrog=np.stack([f["n_leapfrog__"].to_numpy() for f in frames]),
        accept_stat=np.stack([f["accept_stat__"].to_numpy() for f in frames]),
        step_size=np.array([f["stepsize__"].iloc[0] for f in frames]),
        inv_metric=np.empty((len(frames), 0)),
    )
