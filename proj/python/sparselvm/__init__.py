"""Sparse exponential-family matrix factorisation (L1 MAP, LXPCA/NXPCA, spike-and-slab)."""

import json

from ._core import (
    default_config_json,
    fit_l1,
    fit_spike_slab,
    generate_block_images,
    generate_sparse_counts,
    hmc_fit,
    log_prob,
    make_splits,
    nlp_bits,
    observed_loglik,
    rmse,
    run_experiment_json,
)

__all__ = [
    "default_config",
    "fit_l1",
    "fit_spike_slab",
    "generate_block_images",
    "generate_sparse_counts",
    "hmc_fit",
    "log_prob",
    "make_splits",
    "nlp_bits",
    "observed_loglik",
    "rmse",
    "run_experiment",
]


def default_config():
    return json.loads(default_config_json())


def _merge(base, patch):
    for key, value in patch.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def run_experiment(config=None, **overrides):
    """Run the holdout protocol; returns (summary dict, report CSV text).

    `config` is merged over the defaults; keyword overrides apply last.
    """
    cfg = _merge(default_config(), config or {})
    _merge(cfg, overrides)
    summary, report = run_experiment_json(json.dumps(cfg))
    return json.loads(summary), report
