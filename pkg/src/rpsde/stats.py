"""Monte Carlo moment estimators shared by the solver and the verifier."""
import numpy as np

__all__ = ["aggregate_moments"]


def aggregate_moments(values):
    """Mean, covariance and standard errors over the leading (path) axis.

    ``values`` has shape ``(P, ..., d)``.  Returns a dict with ``mean``,
    ``cov`` (unbiased), ``se_mean`` (sample sd / sqrt(P)) and ``se_cov``, the
    standard error of each covariance entry estimated from the sample variance
    of the centred products.  Needs ``P >= 2`` for anything but the mean.
    """
    x = np.asarray(values, dtype=float)
    p = x.shape[0]
    mean = x.mean(axis=0)
    out = {"n": p, "mean": mean}
    if p < 2:
        nan = np.full(mean.shape + mean.shape[-1:], np.nan)
        out.update(cov=nan, se_mean=np.full(mean.shape, np.nan), se_cov=nan)
        return out
    c = x - mean
    prod = c[..., :, None] * c[..., None, :]
    cov = prod.sum(axis=0) / (p - 1)
    out["cov"] = cov
    out["se_mean"] = np.sqrt(np.diagonal(cov, axis1=-2, axis2=-1) / p)
    out["se_cov"] = np.sqrt(prod.var(axis=0, ddof=1) / p)
    return out
