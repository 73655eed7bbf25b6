"""Seeded synthetic-data harness: truth generation under models M1/M2,
matrix-normal sampling, relative spectral-norm metrics, and replication
studies comparing the KMLE / Base / PICSE estimators.

Reproducibility: every random draw comes from a Philox (4x64 counter-based)
bit generator keyed by numpy SeedSequence spawn keys of the form
(rep, purpose, ...what) under the experiment seed, so replications are
independent, order-insensitive, and byte-stable across runs.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import core_geometry, kcd, matops, picse
from .errors import DefinitenessError, NoKroneckerMle, StructureError
from .kcd import SquareRootKind

_FIT_ERRORS = (
    NoKroneckerMle,
    DefinitenessError,
    StructureError,
    np.linalg.LinAlgError,
)

# spawn-key purpose codes
_TRUTH = 0
_DATA = 1
_CORE_FACTOR = 2
_OBS = 3

CSV_HEADER = [
    "estimator",
    "rep",
    "n",
    "metric_sigma",
    "metric_k",
    "metric_c",
    "lambda_hat",
    "termination",
    "failed",
]


def _seq(seed, *key):
    if isinstance(seed, np.random.SeedSequence):
        entropy = seed.entropy
        base = tuple(seed.spawn_key)
    else:
        entropy = int(seed)
        base = ()
    return np.random.SeedSequence(entropy=entropy, spawn_key=base + key)


def _rng(seed, *key):
    return np.random.Generator(np.random.Philox(_seq(seed, *key)))


@dataclass(frozen=True)
class ExperimentConfig:
    model: str  # "m1" | "m2"
    dims: matops.Dims
    lam: float
    n_list: tuple
    reps: int
    seed: int
    h_kinds: tuple = (SquareRootKind.SYMMETRIC,)
    tol: float = 1e-6
    max_iter: int = 200

    def __post_init__(self):
        if self.model not in ("m1", "m2"):
            raise ValueError(f"unknown model {self.model!r}")
        if not (0.0 < self.lam < 1.0):
            raise ValueError("lambda must lie in (0, 1)")
        if self.reps < 1 or any(n < 2 for n in self.n_list):
            raise ValueError("need reps >= 1 and every n >= 2")
        if self.dims.r is None:
            raise ValueError("experiment dims need a rank")


@dataclass(frozen=True)
class ResultRecord:
    estimator: str
    rep: int
    n: int
    metric_sigma: float = np.nan
    metric_k: float = np.nan
    metric_c: float = np.nan
    lambda_hat: float = None
    wall_time_s: float = 0.0
    termination: str = ""
    failed: bool = False


@dataclass(frozen=True)
class TruthBundle:
    sigma: np.ndarray
    k_sqrt: np.ndarray
    k: np.ndarray
    a: np.ndarray
    lam: float
    d: np.ndarray  # isotropy replacement core in M2, None in M1
    model: str


def _random_spd_capped(q, rng, cond_cap=50.0):
    """Random SPD with orthogonal eigenbasis and condition number <= cap."""
    g = rng.standard_normal((q, q))
    qmat, rmat = np.linalg.qr(g)
    qmat = qmat * np.sign(np.diag(rmat))
    lo = 1.0 / np.sqrt(cond_cap)
    w = np.exp(rng.uniform(np.log(lo), np.log(lo * cond_cap), size=q))
    return matops.sym((qmat * w) @ qmat.T)


def gen_truth(model, dims, lam, seed):
    """Draw one ground-truth covariance under M1 or M2.

    M1: Sigma = K^(1/2) ((1-lam) A A^T + lam I) K^(1/2)T
    M2: the same with I replaced by a random diagonal core D = c(D_tilde).
    """
    rng = _rng(seed, _TRUTH)
    k1 = _random_spd_capped(dims.p1, rng)
    k2 = _random_spd_capped(dims.p2, rng)
    k_sqrt = matops.kron(k2, k1)
    a = core_geometry.random_core_factor(dims, _seq(seed, _CORE_FACTOR))
    if model == "m2":
        dtil = np.diag(np.exp(rng.uniform(np.log(1.0 / 3.0), np.log(3.0), dims.p)))
        d = kcd.core(dtil, dims, SquareRootKind.SYMMETRIC)
        d = np.diag(np.diag(d))  # the core of a diagonal matrix is diagonal
    else:
        d = np.eye(dims.p)
    core_part = (1.0 - lam) * (a @ a.T) + lam * d
    sigma = matops.sym(k_sqrt @ core_part @ k_sqrt.T)
    return TruthBundle(
        sigma=sigma,
        k_sqrt=k_sqrt,
        k=matops.sym(k_sqrt @ k_sqrt.T),
        a=a,
        lam=lam,
        d=d if model == "m2" else None,
        model=model,
    )


def gen_data(sigma, n, seed, dims):
    """n observations with vec(Y_i) = Sigma^(1/2) z_i, one Philox stream per
    observation keyed by (seed, i)."""
    root = matops.sym_sqrt(sigma)
    out = np.empty((n, dims.p1, dims.p2))
    for i in range(n):
        z = _rng(seed, _OBS, i).standard_normal(dims.p)
        out[i] = matops.mat(root @ z, dims.p1, dims.p2)
    return out


def rel_spec_norm(est, truth):
    """Spectral norm of the estimation error over that of the truth."""
    denom = np.linalg.norm(np.asarray(truth, dtype=float), 2)
    if denom == 0.0:
        raise ValueError("truth matrix is zero")
    return float(np.linalg.norm(np.asarray(est, dtype=float) - truth, 2) / denom)


def _estimator_list(config):
    names = [("kmle", None)]
    for kind in config.h_kinds:
        names.append((f"base-{kind.value}", kind))
    for kind in config.h_kinds:
        names.append((f"picse-{kind.value}", kind))
    return names


def run_experiment(config):
    """Run the replication study; returns (records, summary dict).

    Per replication and sample size, each estimator is fit and scored against
    the truth Sigma, its Kronecker component K, and its core component C (the
    core comparison uses the estimator's own square-root convention; KMLE is
    scored with the symmetric one).  Failures become flagged records.
    """
    dims = config.dims
    records = []
    for rep in range(config.reps):
        truth = gen_truth(config.model, dims, config.lam, _seq(config.seed, rep))
        truth_cores = {}
        for kind in set(config.h_kinds) | {SquareRootKind.SYMMETRIC}:
            truth_cores[kind] = kcd.kcd(truth.sigma, dims, kind).c
        for n in config.n_list:
            data = gen_data(truth.sigma, n, _seq(config.seed, rep, _DATA, n), dims)
            for name, kind in _estimator_list(config):
                records.append(
                    _run_one(name, kind, data, dims, config, truth, truth_cores, rep, n)
                )
    return records, _summarize(config, records)


def _run_one(name, kind, data, dims, config, truth, truth_cores, rep, n):
    t0 = time.perf_counter()
    lam_hat = None
    termination = "closed_form"
    try:
        if name == "kmle":
            sigma_hat = picse.kmle_estimator(data, dims)
            score_kind = SquareRootKind.SYMMETRIC
            c_hat = np.eye(dims.p)
        elif name.startswith("base"):
            sigma_hat = picse.base_estimator(data, dims, dims.r, kind)
            score_kind = kind
            c_hat = None
        else:
            cfg = picse.FitConfig(
                tol=config.tol, max_iter=config.max_iter, h_kind=kind
            )
            tau, sigma_hat, trace = picse.fit(data, dims, cfg)
            lam_hat = tau.lam
            termination = trace.termination
            score_kind = kind
            c_hat = (1.0 - tau.lam) * (tau.a @ tau.a.T) + tau.lam * np.eye(dims.p)
        dec = kcd.kcd(sigma_hat, dims, score_kind)
        if c_hat is None:
            c_hat = dec.c
        return ResultRecord(
            estimator=name,
            rep=rep,
            n=n,
            metric_sigma=rel_spec_norm(sigma_hat, truth.sigma),
            metric_k=rel_spec_norm(dec.k.matrix, truth.k),
            metric_c=rel_spec_norm(c_hat, truth_cores[score_kind]),
            lambda_hat=lam_hat,
            wall_time_s=time.perf_counter() - t0,
            termination=termination,
            failed=False,
        )
    except _FIT_ERRORS as exc:
        return ResultRecord(
            estimator=name,
            rep=rep,
            n=n,
            lambda_hat=None,
            wall_time_s=time.perf_counter() - t0,
            termination=f"error:{type(exc).__name__}",
            failed=True,
        )


def _summarize(config, records):
    cells = {}
    for rec in records:
        cells.setdefault((rec.estimator, rec.n), []).append(rec)
    summary = {
        "config": {
            "model": config.model,
            "p1": config.dims.p1,
            "p2": config.dims.p2,
            "rank": config.dims.r,
            "lambda": config.lam,
            "n_list": list(config.n_list),
            "reps": config.reps,
            "seed": config.seed,
            "h_kinds": [k.value for k in config.h_kinds],
            "tol": config.tol,
            "max_iter": config.max_iter,
        },
        "cells": [],
    }
    for (estimator, n), cell in sorted(cells.items()):
        ok = [r for r in cell if not r.failed]
        entry = {
            "estimator": estimator,
            "n": n,
            "count": len(cell),
            "failures": len(cell) - len(ok),
            "wall_time_total_s": float(sum(r.wall_time_s for r in cell)),
        }
        for metric in ("metric_sigma", "metric_k", "metric_c"):
            vals = [getattr(r, metric) for r in ok]
            entry[f"{metric}_mean"] = float(np.mean(vals)) if vals else None
            entry[f"{metric}_std"] = float(np.std(vals)) if vals else None
        lams = [r.lambda_hat for r in ok if r.lambda_hat is not None]
        entry["lambda_hat_mean"] = float(np.mean(lams)) if lams else None
        entry["lambda_hat_std"] = float(np.std(lams)) if lams else None
        summary["cells"].append(entry)
    return summary


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "" if np.isnan(value) else repr(value)
    return str(value)


def write_results_csv(records, path):
    """One record per row.  Wall times are deliberately left out so reruns of
    the same configuration are byte-identical; timing lives in the summary."""
    lines = [",".join(CSV_HEADER)]
    for r in records:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    r.estimator,
                    r.rep,
                    r.n,
                    r.metric_sigma,
                    r.metric_k,
                    r.metric_c,
                    r.lambda_hat,
                    r.termination,
                    r.failed,
                )
            )
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_summary_json(summary, path):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
