"""Distances between a generated ensemble and a held-out reference ensemble.

* feature channel: KL between isotropic Gaussians fitted to each ensemble;
* structure channel: MMD between per-graph degree histograms, plus simple
  spectral and max-degree summaries.

Generated adjacencies are real valued, so both ensembles are symmetrized and
thresholded before any structural statistic is taken. For 0/1 input this is a
no-op.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .diffusion import gaussian_kl
from .errors import ParameterError
from .graphs import max_degree, spectral_norm

VAR_FLOOR = 1e-12
DEFAULT_THRESHOLD = 0.5
EVAL_COLUMNS = ("trial", "condition", "seed", "feature_kl", "degree_mmd", "spectral_gap_delta",
                "max_degree_delta", "n_generated", "n_reference", "variance_clamped")


def _stack(ensemble, what):
    arr = np.asarray([np.asarray(m, dtype=float) for m in ensemble]) if not isinstance(ensemble, np.ndarray) \
        else np.asarray(ensemble, dtype=float)
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ParameterError(f"{what} must be a non-empty stack of matrices")
    return arr


def gaussian_fit(ensemble) -> tuple[np.ndarray, float, bool]:
    """Entrywise mean and pooled variance of an ensemble; the flag is set when the variance was floored."""
    arr = _stack(ensemble, "ensemble")
    mean = arr.mean(axis=0)
    var = float(np.mean((arr - mean) ** 2))
    if var < VAR_FLOOR:
        return mean, VAR_FLOOR, True
    return mean, var, False


def fit_gaussian_kl(generated, reference, return_flag: bool = False):
    """KL(reference fit || generated fit) between isotropic Gaussian fits."""
    mu_g, var_g, clamp_g = gaussian_fit(generated)
    mu_r, var_r, clamp_r = gaussian_fit(reference)
    if mu_g.shape != mu_r.shape:
        raise ParameterError(f"feature shapes differ: {mu_g.shape} vs {mu_r.shape}")
    clamped = clamp_g or clamp_r
    if clamped:
        warnings.warn("degenerate ensemble variance floored at 1e-12", RuntimeWarning, stacklevel=2)
    kl = max(gaussian_kl(mu_r, var_r, mu_g, var_g), 0.0)
    return (kl, clamped) if return_flag else kl


def binarize(a, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Symmetrize, threshold and drop the diagonal; works on one matrix or a stack."""
    if not 0 < threshold < 1:
        raise ParameterError("threshold must lie in (0, 1)")
    a = np.asarray(a, dtype=float)
    sym = 0.5 * (a + np.swapaxes(a, -1, -2))
    b = (sym > threshold).astype(float)
    n = a.shape[-1]
    b[..., np.arange(n), np.arange(n)] = 0.0
    return b


def degree_histograms(adjs) -> np.ndarray:
    """Per-graph degree histogram over bins 0..N-1, normalized to sum to one."""
    adjs = np.asarray(adjs)
    n = adjs.shape[-1]
    deg = adjs.sum(axis=-1).astype(int)
    hist = np.zeros((adjs.shape[0], n))
    for i, d in enumerate(deg):
        hist[i] = np.bincount(d, minlength=n)[:n]
    return hist / n


def _sq_dists(p, q):
    return np.maximum(np.sum(p * p, 1)[:, None] + np.sum(q * q, 1)[None, :] - 2.0 * p @ q.T, 0.0)


def mmd2_unbiased(p, q) -> float:
    """Unbiased MMD^2 with a Gaussian kernel; bandwidth from the median heuristic on the pooled set."""
    m, n = len(p), len(q)
    pooled = np.vstack([p, q])
    d2 = _sq_dists(pooled, pooled)
    iu = np.triu_indices(m + n, k=1)
    dists = np.sqrt(d2[iu])
    positive = dists[dists > 0]
    h = float(np.median(dists)) if np.median(dists) > 0 else (float(np.median(positive)) if positive.size else 1.0)
    k = np.exp(-d2 / (2.0 * h * h))
    kxx, kyy, kxy = k[:m, :m], k[m:, m:], k[:m, m:]
    xx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    yy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(xx + yy - 2.0 * kxy.mean())


def degree_mmd(generated, reference, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Unbiased degree-histogram MMD^2, clamped at zero.

    Each ensemble needs at least two graphs for the unbiased estimator.
    """
    gen = _stack(generated, "generated ensemble")
    ref = _stack(reference, "reference ensemble")
    if gen.shape[1] != gen.shape[2] or ref.shape[1:] != gen.shape[1:]:
        raise ParameterError("adjacencies must be square and of one size")
    if len(gen) < 2 or len(ref) < 2:
        raise ParameterError("degree_mmd needs at least two graphs per ensemble")
    hg = degree_histograms(binarize(gen, threshold))
    hr = degree_histograms(binarize(ref, threshold))
    return max(mmd2_unbiased(hg, hr), 0.0)


def spectral_gap(a) -> float:
    """Largest minus second-largest adjacency eigenvalue."""
    ev = np.linalg.eigvalsh(np.asarray(a, dtype=float))
    return float(ev[-1] - ev[-2]) if ev.size > 1 else 0.0


def structural_stats(adjs, threshold: float = DEFAULT_THRESHOLD) -> tuple[float, float]:
    """(mean max degree, mean spectral norm) of a binarized ensemble."""
    b = binarize(_stack(adjs, "adjacency ensemble"), threshold)
    return float(np.mean([max_degree(a) for a in b])), float(np.mean([spectral_norm(a) for a in b]))


@dataclass(frozen=True)
class EvalReport:
    feature_kl: float
    degree_mmd: float
    spectral_gap_delta: float
    max_degree_delta: float
    n_generated: int
    n_reference: int
    variance_clamped: bool = False

    def __post_init__(self):
        vals = (self.feature_kl, self.degree_mmd, self.spectral_gap_delta, self.max_degree_delta)
        if not all(np.isfinite(vals)):
            raise ParameterError("report values must be finite")
        if self.feature_kl < 0 or self.degree_mmd < 0:
            raise ParameterError("KL and MMD are non-negative")

    def as_row(self, trial, condition, seed) -> list:
        d = asdict(self)
        return [trial, condition, seed] + [d[c] for c in EVAL_COLUMNS[3:]]


def evaluate(gen_x, gen_a, ref_x, ref_a, *, features=True, structure=True,
             threshold: float = DEFAULT_THRESHOLD) -> EvalReport:
    """Full report; a frozen channel (``features=False`` / ``structure=False``) scores 0 on its metric."""
    gen_x, ref_x = _stack(gen_x, "generated features"), _stack(ref_x, "reference features")
    gen_a, ref_a = _stack(gen_a, "generated adjacencies"), _stack(ref_a, "reference adjacencies")
    kl, clamped = fit_gaussian_kl(gen_x, ref_x, return_flag=True) if features else (0.0, False)
    mmd = degree_mmd(gen_a, ref_a, threshold) if structure else 0.0
    bg, br = binarize(gen_a, threshold), binarize(ref_a, threshold)
    gap = np.mean([spectral_gap(a) for a in bg]) - np.mean([spectral_gap(a) for a in br])
    deg = np.mean([max_degree(a) for a in bg]) - np.mean([max_degree(a) for a in br])
    return EvalReport(float(kl), float(mmd), float(gap), float(deg), len(gen_x), len(ref_x), bool(clamped))


def write_eval_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_COLUMNS)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
