"""Hierarchical heterogeneous multi-output GP on a Kronecker grid.

The latent field is ``f = (diag(alpha) L kron C3 kron C2 kron C1) eta`` with
``Ci = chol(Ki)`` and ``eta`` standard normal. Gaussian outputs share a
correlated noise covariance; Bernoulli outputs use a probit link. Missing
outcomes are parameters: real-valued for Gaussian outputs, relaxed into
``(0, 1)`` for Bernoulli outputs.

All densities are evaluated over the unconstrained parameter vector, so the
log-Jacobians of the transforms are included.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, gammaln

from .grid import GridDesign, OutcomeMatrix
from .kernels import LINEAR, SE_ARD, KernelSpec, sq_dist_by_dim
from .kernels import linear as linear_kernel
from ._small import chol_backward, cholesky, se_matrix, tri_inv
from .probit import log_ndtr, log_ndtr_pair
from .kron import BASE_JITTER, DENSE_CAP, CholeskyError, chol_factor, dense_kron, kron_matvec
from .transforms import corr_cholesky, corr_cholesky_grad, corr_cholesky_inverse, logit, n_corr_params

LOG_2PI = np.log(2.0 * np.pi)

MODEL_NAMES = ("gp.f", "gp.m", "lin.f", "lin.m")


@dataclass(frozen=True)
class ModelConfig:
    """Model variant and prior constants.

    ``random_effect`` adds ``sigma2_re * I`` to the kernel of
    ``individual_component`` (1-based). ``kernel_override`` replaces every
    component kernel, e.g. ``"linear"`` for the parametric baselines.
    """

    random_effect: bool = False
    individual_component: int = 3
    prior_shape: float = 2.0
    prior_scale: float = 1.0
    lkj_shape: float = 3.0
    jitter: float = BASE_JITTER
    kernel_override: Optional[str] = None

    def __post_init__(self):
        if self.individual_component not in (1, 2, 3):
            raise ValueError("individual_component must be 1, 2 or 3")
        if min(self.prior_shape, self.prior_scale, self.lkj_shape) <= 0:
            raise ValueError("prior constants must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")

    @classmethod
    def variant(cls, name: str, **kwargs) -> "ModelConfig":
        """Config for ``gp.f``, ``gp.m``, ``lin.f`` or ``lin.m``."""
        key = name.lower()
        if key not in MODEL_NAMES:
            raise ValueError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
        family, effect = key.split(".")
        return cls(
            random_effect=effect == "m",
            kernel_override=LINEAR if family == "lin" else None,
            **kwargs,
        )

    def resolve_kernels(self, design: GridDesign) -> list[KernelSpec]:
        specs = []
        for i, comp in enumerate(design.components, start=1):
            spec = comp.kernel
            if self.kernel_override is not None:
                spec = spec.with_kind(self.kernel_override)
            spec = replace(spec, add_random_effect=self.random_effect and i == self.individual_component)
            specs.append(spec)
        return specs


@dataclass
class ParameterState:
    """Constrained parameter values.

    ``rho`` has one entry per component (``None`` for linear kernels).
    ``eta`` has shape ``(N4, N3, N2, N1)``.
    """

    rho: list
    alpha: np.ndarray
    alpha_n: np.ndarray
    L: np.ndarray
    L_n: np.ndarray
    sigma2_re: Optional[float]
    eta: np.ndarray
    y_miss_gauss: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y_miss_bern: np.ndarray = field(default_factory=lambda: np.zeros(0))


class ParameterLayout:
    """Block structure of the flat unconstrained vector.

    Order: positive parameters (lengthscales, output scales, noise scales,
    random-effect variance), correlation parameters (``L`` then ``L_n``),
    ``eta``, missing Gaussian outcomes, missing Bernoulli outcomes.
    """

    def __init__(self, design: GridDesign, cfg: ModelConfig, observed: np.ndarray):
        self.kernels = cfg.resolve_kernels(design)
        self.m = design.n_outputs
        self.n_g = design.n_gaussian
        self.n_b = design.n_bernoulli
        self.shape = design.tensor_shape
        observed = np.asarray(observed, dtype=bool)
        self.miss_gauss = np.flatnonzero(~observed[: self.n_g].ravel())
        self.miss_bern = np.flatnonzero(~observed[self.n_g:].ravel())

        sizes: list[tuple[str, int]] = []
        self.rho_slices: list[Optional[slice]] = []
        pos = 0
        for i, (comp, spec) in enumerate(zip(design.components, self.kernels), start=1):
            k = spec.n_lengthscales(comp.X.shape[1])
            if k:
                sizes.append((f"rho{i}", k))
                self.rho_slices.append(slice(pos, pos + k))
                pos += k
            else:
                self.rho_slices.append(None)
        sizes.append(("alpha", self.m))
        sizes.append(("alpha_n", self.n_g))
        sizes.append(("sigma2_re", 1 if cfg.random_effect else 0))
        sizes.append(("L", n_corr_params(self.m)))
        sizes.append(("L_n", n_corr_params(self.n_g)))
        sizes.append(("eta", design.latent_size))
        sizes.append(("y_miss_gauss", len(self.miss_gauss)))
        sizes.append(("y_miss_bern", len(self.miss_bern)))
        self.slices: dict[str, slice] = {}
        pos = 0
        for name, n in sizes:
            self.slices[name] = slice(pos, pos + n)
            pos += n
        self.dim = pos
        self.positive = slice(0, self.slices["sigma2_re"].stop)

    def __getitem__(self, name: str) -> slice:
        return self.slices[name]


def _tri_names(prefix: str, m: int) -> list[str]:
    return [f"{prefix}[{i + 1},{j + 1}]" for i in range(1, m) for j in range(i + 1)]


class KronGPPosterior:
    """Log posterior of the model for one dataset, with exact gradient.

    Instances are read-only after construction and safe to share between
    chains.
    """

    def __init__(self, design: GridDesign, y: OutcomeMatrix, cfg: ModelConfig = ModelConfig()):
        y.validate(design)
        self.design = design
        self.cfg = cfg
        self.layout = ParameterLayout(design, cfg, y.observed)
        self.dim = self.layout.dim
        lay = self.layout
        self.m, self.n_g, self.n_b = lay.m, lay.n_g, lay.n_b
        self.shape = lay.shape
        self.n_cells = design.n_cells
        self.re_comp = cfg.individual_component - 1 if cfg.random_effect else None

        self._dist = []
        self._base = []
        for comp, spec in zip(design.components, lay.kernels):
            Xa = spec.columns(comp.X)
            if spec.kind == SE_ARD:
                self._dist.append(sq_dist_by_dim(Xa))
                self._base.append(None)
            else:
                self._dist.append(None)
                self._base.append(linear_kernel(Xa))
        self._eye = [np.eye(n) for n in design.sizes]

        self.y_template = np.where(y.observed, y.values, 0.0)
        self.observed = y.observed.copy()
        self._g_miss = lay.miss_gauss
        self._b_miss = lay.miss_bern
        a, b = cfg.prior_shape, cfg.prior_scale
        self._ig_const = a * np.log(b) - gammaln(a)
        self._eta_const = 0.5 * design.latent_size * LOG_2PI
        self._gauss_const = 0.5 * self.n_cells * self.n_g * LOG_2PI
        self._tril = {n: np.tril(np.ones((n, n))) for n in {self.m, self.n_g, *design.sizes}}

    # ------------------------------------------------------------------
    # parameter names and transforms

    def scalar_names(self) -> list[str]:
        """Names of the interpretable constrained scalars, in draw-table order."""
        names = []
        for i, sl in enumerate(self.layout.rho_slices, start=1):
            if sl is None:
                continue
            k = sl.stop - sl.start
            names += [f"rho{i}"] if k == 1 else [f"rho{i}[{d + 1}]" for d in range(k)]
        names += [f"alpha[{k + 1}]" for k in range(self.m)]
        names += [f"alpha_n[{k + 1}]" for k in range(self.n_g)]
        names += _tri_names("L_n", self.n_g)
        names += _tri_names("L", self.m)
        if self.cfg.random_effect:
            names.append("sigma2_re")
        return names

    def missing_names(self) -> list[str]:
        names = []
        for prefix, idx, offset in (("y_miss", self._g_miss, 0), ("y_miss", self._b_miss, self.n_g)):
            for flat in idx:
                k, c = divmod(int(flat), self.n_cells)
                names.append(f"{prefix}[{self.design.output_names[k + offset]},{c}]")
        return names

    def constrain(self, theta: np.ndarray) -> ParameterState:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("non-finite parameter vector")
        lay = self.layout
        rho = [None if sl is None else np.exp(theta[sl]) for sl in lay.rho_slices]
        L = corr_cholesky(theta[lay["L"]], self.m)[0]
        L_n = corr_cholesky(theta[lay["L_n"]], self.n_g)[0] if self.n_g else np.zeros((0, 0))
        s2 = float(np.exp(theta[lay["sigma2_re"]][0])) if self.cfg.random_effect else None
        return ParameterState(
            rho=rho,
            alpha=np.exp(theta[lay["alpha"]]),
            alpha_n=np.exp(theta[lay["alpha_n"]]),
            L=L,
            L_n=L_n,
            sigma2_re=s2,
            eta=theta[lay["eta"]].reshape(self.shape).copy(),
            y_miss_gauss=theta[lay["y_miss_gauss"]].copy(),
            y_miss_bern=expit(theta[lay["y_miss_bern"]]),
        )

    def unconstrain(self, state: ParameterState) -> np.ndarray:
        lay = self.layout
        out = np.empty(self.dim)
        for sl, r in zip(lay.rho_slices, state.rho):
            if sl is not None:
                out[sl] = np.log(np.asarray(r, dtype=float))
        out[lay["alpha"]] = np.log(state.alpha)
        out[lay["alpha_n"]] = np.log(state.alpha_n)
        if self.cfg.random_effect:
            out[lay["sigma2_re"]] = np.log(state.sigma2_re)
        out[lay["L"]] = corr_cholesky_inverse(state.L)
        out[lay["L_n"]] = corr_cholesky_inverse(state.L_n) if self.n_g else np.zeros(0)
        out[lay["eta"]] = np.asarray(state.eta, dtype=float).ravel()
        out[lay["y_miss_gauss"]] = state.y_miss_gauss
        out[lay["y_miss_bern"]] = logit(state.y_miss_bern)
        if not np.all(np.isfinite(out)):
            raise ValueError("state violates its constraints")
        return out

    def scalars(self, theta: np.ndarray) -> np.ndarray:
        """Interpretable constrained scalars matching :meth:`scalar_names`."""
        st = self.constrain(theta)
        parts = [r for r in st.rho if r is not None]
        parts += [st.alpha, st.alpha_n]
        parts.append(st.L_n[np.tril_indices(self.n_g)][1:] if self.n_g else np.zeros(0))
        parts.append(st.L[np.tril_indices(self.m)][1:])
        if self.cfg.random_effect:
            parts.append([st.sigma2_re])
        return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])

    def missing_values(self, theta: np.ndarray) -> np.ndarray:
        lay = self.layout
        return np.concatenate([theta[lay["y_miss_gauss"]], expit(theta[lay["y_miss_bern"]])])

    # ------------------------------------------------------------------
    # model pieces

    def kernel_matrices(self, rho, sigma2_re) -> list[np.ndarray]:
        mats = []
        for i in range(3):
            add = self.cfg.jitter + (sigma2_re if i == self.re_comp else 0.0)
            if self._dist[i] is not None:
                inv = 1.0 / np.asarray(rho[i], dtype=float) ** 2
                mats.append(se_matrix(self._dist[i], inv, add))
            else:
                mats.append(self._base[i] + add * self._eye[i])
        return mats

    def _chol(self, k: np.ndarray) -> np.ndarray:
        c, ok = cholesky(k)
        if ok:
            return c
        # k already carries the base jitter; escalate from there
        return chol_factor(k, jitter=self.cfg.jitter * 10)

    def latent_factors(self, state: ParameterState) -> list[np.ndarray]:
        """Kronecker factors ``[diag(alpha) L, C3, C2, C1]`` of the latent map."""
        k1, k2, k3 = self.kernel_matrices(state.rho, state.sigma2_re)
        cout = np.asarray(state.alpha)[:, None] * state.L
        return [cout, self._chol(k3), self._chol(k2), self._chol(k1)]

    def latent_f(self, state: ParameterState) -> np.ndarray:
        """Latent field as an ``(N4, N1*N2*N3)`` matrix."""
        f = kron_matvec(self.latent_factors(state), np.asarray(state.eta).ravel())
        return f.reshape(self.m, self.n_cells)

    def filled_outcomes(self, state: ParameterState) -> np.ndarray:
        yfull = self.y_template.copy()
        yfull[: self.n_g].ravel()[self._g_miss] = state.y_miss_gauss
        yb = yfull[self.n_g:]
        yb.ravel()[self._b_miss] = state.y_miss_bern
        return yfull

    def log_likelihood(self, state: ParameterState) -> float:
        f = self.latent_f(state)
        yfull = self.filled_outcomes(state)
        out = 0.0
        if self.n_g:
            cn = np.asarray(state.alpha_n)[:, None] * state.L_n
            z = solve_triangular(cn, yfull[: self.n_g] - f[: self.n_g], lower=True)
            out += -0.5 * np.sum(z * z) - self.n_cells * (
                np.sum(np.log(np.diag(cn))) + 0.5 * self.n_g * LOG_2PI
            )
        if self.n_b:
            fb, yb = f[self.n_g:], yfull[self.n_g:]
            out += float(np.sum(yb * log_ndtr(fb) + (1.0 - yb) * log_ndtr(-fb)))
        return float(out)

    def log_prior(self, state: ParameterState) -> float:
        """Prior density over the unconstrained coordinates of ``state``."""
        return float(self._prior_and_grad(self.unconstrain(state))[0])

    def _prior_and_grad(self, theta: np.ndarray):
        # prior plus Jacobian terms only; used for testing and log_prior
        lay = self.layout
        grad = np.zeros(self.dim)
        a, b = self.cfg.prior_shape, self.cfg.prior_scale
        u = theta[lay.positive]
        lp = np.sum(self._ig_const - a * u - b * np.exp(-u))
        grad[lay.positive] = -a + b * np.exp(-u)
        for name, m in (("L", self.m), ("L_n", self.n_g)):
            if m:
                L, lj, lkj, cache = corr_cholesky(theta[lay[name]], m, self.cfg.lkj_shape)
                lp += lj + lkj
                grad[lay[name]] = corr_cholesky_grad(np.zeros((m, m)), L, cache)
        eta = theta[lay["eta"]]
        lp += -0.5 * eta @ eta - 0.5 * eta.size * LOG_2PI
        grad[lay["eta"]] = -eta
        ub = theta[lay["y_miss_bern"]]
        yb = expit(ub)
        lp += np.sum(-np.logaddexp(0.0, -ub) - np.logaddexp(0.0, ub))
        grad[lay["y_miss_bern"]] = 1.0 - 2.0 * yb
        return float(lp), grad

    # ------------------------------------------------------------------
    # joint density with gradient

    def logp_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        """Unnormalized log posterior over unconstrained ``theta`` and its gradient.

        Returns ``(-inf, zeros)`` if the value cannot be computed, which the
        sampler treats as a divergence.
        """
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                lp, grad = self._logp_and_grad(np.asarray(theta, dtype=float))
        except (np.linalg.LinAlgError, CholeskyError, FloatingPointError, ValueError, ZeroDivisionError, OverflowError):
            return -np.inf, np.zeros(self.dim)
        if not np.isfinite(lp) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros(self.dim)
        return lp, grad

    def logp(self, theta: np.ndarray) -> float:
        return self.logp_and_grad(theta)[0]

    def _logp_and_grad(self, theta: np.ndarray):
        lay = self.layout
        cfg = self.cfg
        m, n_g, n_b, M = self.m, self.n_g, self.n_b, self.n_cells
        grad = np.zeros(self.dim)

        # positive parameters: InvGamma prior on the log scale, Jacobian included
        a, b = cfg.prior_shape, cfg.prior_scale
        u = theta[lay.positive]
        eu = np.exp(-u)
        lp = float(np.sum(self._ig_const - a * u - b * eu))
        grad[lay.positive] = -a + b * eu
        pos = np.exp(u)

        rho = [None if sl is None else pos[sl] for sl in lay.rho_slices]
        alpha = pos[lay["alpha"]]
        alpha_n = pos[lay["alpha_n"]]
        s2 = float(pos[lay["sigma2_re"]][0]) if cfg.random_effect else 0.0

        L, lj, lkj, lcache = corr_cholesky(theta[lay["L"]], m, cfg.lkj_shape)
        lp += lj + lkj
        if n_g:
            Ln, ljn, lkjn, ncache = corr_cholesky(theta[lay["L_n"]], n_g, cfg.lkj_shape)
            lp += ljn + lkjn

        eta = theta[lay["eta"]]
        lp += -0.5 * float(eta @ eta) - self._eta_const

        # latent field, slowest factor first
        kmats = self.kernel_matrices(rho, s2)
        C1, C2, C3 = (self._chol(k) for k in kmats)
        cout = alpha[:, None] * L
        _, n3, n2, n1 = self.shape
        T0 = eta.reshape(m, -1)
        T1 = (cout @ T0).reshape(m, n3, n2 * n1)
        T2 = (C3 @ T1).reshape(m * n3, n2, n1)
        T3 = C2 @ T2
        F = (T3.reshape(-1, n1) @ C1.T).reshape(m, M)

        # likelihood and its gradient w.r.t. F and the filled-in outcomes
        gF = np.empty((m, M))
        if n_g:
            yg = self.y_template[:n_g].copy()
            yg.ravel()[self._g_miss] = theta[lay["y_miss_gauss"]]
            cn = alpha_n[:, None] * Ln
            cn_inv = tri_inv(cn)
            Z = cn_inv @ (yg - F[:n_g])
            dcn = np.diag(cn)
            lp += -0.5 * float(np.sum(Z * Z)) - M * float(np.sum(np.log(dcn))) - self._gauss_const
            W = cn_inv.T @ Z
            gF[:n_g] = W
            grad[lay["y_miss_gauss"]] = -W.ravel()[self._g_miss]
            g_cn = (W @ Z.T) * self._tril[n_g]
            g_cn.flat[:: n_g + 1] -= M / dcn
            grad[lay["alpha_n"]] += alpha_n * np.sum(g_cn * Ln, axis=1)
            grad[lay["L_n"]] = corr_cholesky_grad(alpha_n[:, None] * g_cn, Ln, ncache)
        if n_b:
            yb = self.y_template[n_g:].copy()
            ub = theta[lay["y_miss_bern"]]
            ymb = expit(ub)
            yb.ravel()[self._b_miss] = ymb
            fb = F[n_g:]
            l1, l0, r1, r0 = log_ndtr_pair(fb)
            lp += float(np.sum(yb * l1 + (1.0 - yb) * l0))
            gF[n_g:] = yb * r1 - (1.0 - yb) * r0
            if ub.size:
                dy = (l1 - l0).ravel()[self._b_miss]
                # relaxed outcome through the logistic map, plus its log-Jacobian
                lp += float(np.sum(-np.logaddexp(0.0, -ub) - np.logaddexp(0.0, ub)))
                grad[lay["y_miss_bern"]] = dy * ymb * (1.0 - ymb) + 1.0 - 2.0 * ymb

        # reverse pass through the mode products
        G = gF.reshape(-1, n1)
        gC1 = G.T @ T3.reshape(-1, n1)
        G3 = (G @ C1).reshape(m * n3, n2, n1)
        gC2 = _mode_gram(G3, T2)
        G2 = (C2.T @ G3).reshape(m, n3, n2 * n1)
        gC3 = _mode_gram(G2, T1)
        G1 = (C3.T @ G2).reshape(m, -1)
        g_cout = (G1 @ T0.T) * self._tril[m]
        grad[lay["eta"]] = (cout.T @ G1).ravel() - eta
        grad[lay["alpha"]] += alpha * np.sum(g_cout * L, axis=1)
        grad[lay["L"]] = corr_cholesky_grad(alpha[:, None] * g_cout, L, lcache)

        # kernel hyperparameters through the Cholesky factors
        for i, (C, gC) in enumerate(((C1, gC1), (C2, gC2), (C3, gC3))):
            sl = lay.rho_slices[i]
            if sl is None and i != self.re_comp:
                continue
            gK = chol_backward(C, gC)
            if sl is not None:
                # d K / d log(rho_d) = K * D_d / rho_d**2 off the diagonal
                K = kmats[i]
                grad[sl] += (self._dist[i].reshape(len(rho[i]), -1) @ (gK * K).ravel()) / rho[i] ** 2
            if i == self.re_comp:
                grad[lay["sigma2_re"]] += s2 * np.trace(gK)
        return lp, grad


def _mode_gram(G: np.ndarray, T: np.ndarray) -> np.ndarray:
    """``sum_{b,k} G[b, a, k] T[b, j, k]`` for 3-D arrays."""
    n = G.shape[1]
    return np.matmul(G, T.transpose(0, 2, 1)).sum(axis=0) if G.shape[0] <= n else (
        G.transpose(1, 0, 2).reshape(n, -1) @ T.transpose(1, 0, 2).reshape(n, -1).T
    )


# ----------------------------------------------------------------------
# functional surface


def constrain(flat, design: GridDesign, y: OutcomeMatrix, cfg: ModelConfig = ModelConfig()) -> ParameterState:
    return KronGPPosterior(design, y, cfg).constrain(flat)


def unconstrain(state: ParameterState, design: GridDesign, y: OutcomeMatrix, cfg: ModelConfig = ModelConfig()) -> np.ndarray:
    return KronGPPosterior(design, y, cfg).unconstrain(state)


def log_prior(state: ParameterState, design: GridDesign, y: OutcomeMatrix, cfg: ModelConfig = ModelConfig()) -> float:
    return KronGPPosterior(design, y, cfg).log_prior(state)


def build_latent_f(state: ParameterState, design: GridDesign, cfg: ModelConfig = ModelConfig()) -> np.ndarray:
    y = OutcomeMatrix(np.zeros((design.n_outputs, design.n_cells)), np.ones((design.n_outputs, design.n_cells), bool))
    return KronGPPosterior(design, y, cfg).latent_f(state)


def log_likelihood(state: ParameterState, design: GridDesign, y: OutcomeMatrix, cfg: ModelConfig = ModelConfig()) -> float:
    return KronGPPosterior(design, y, cfg).log_likelihood(state)


def log_posterior_and_grad(flat, design: GridDesign, y: OutcomeMatrix, cfg: ModelConfig = ModelConfig()):
    return KronGPPosterior(design, y, cfg).logp_and_grad(flat)


def dense_latent_covariance(state: ParameterState, design: GridDesign, cfg: ModelConfig = ModelConfig(), cap: int = DENSE_CAP) -> np.ndarray:
    """Dense ``K_out kron K3 kron K2 kron K1`` (test oracle)."""
    if design.latent_size > cap:
        raise ValueError(f"latent size {design.latent_size} exceeds cap {cap}")
    y = OutcomeMatrix(np.zeros((design.n_outputs, design.n_cells)), np.ones((design.n_outputs, design.n_cells), bool))
    post = KronGPPosterior(design, y, cfg)
    k1, k2, k3 = post.kernel_matrices(state.rho, state.sigma2_re or 0.0)
    cout = np.asarray(state.alpha)[:, None] * state.L
    return dense_kron([cout @ cout.T, k3, k2, k1], cap=cap)


__all__ = [
    "KronGPPosterior",
    "ModelConfig",
    "ParameterLayout",
    "ParameterState",
    "build_latent_f",
    "constrain",
    "dense_latent_covariance",
    "log_likelihood",
    "log_posterior_and_grad",
    "log_prior",
    "unconstrain",
]
