"""Fitting the execution cost model to a reference latency table.

The bundled table gives uncontended response times for three monitoring
applications under each static policy, bandwidth tier, and sampling level.
Calibration searches the identifiable cost-model parameters so that
``analytic_latency`` reproduces those numbers: node speeds for device and
cloud, the six link bandwidths, and per application and sampling level the
front compute (stages one and two, which the reference policies never
split), the final-stage compute, the raw input volume, and the feature
volume crossing the network under the partial policy.

The fit is plain cyclic coordinate descent on the log of each parameter,
minimizing mean squared log latency error. Log space keeps every parameter
positive and makes a step of a given size mean the same relative change for
a byte volume as for a speed. Ordering constraints (bandwidth tiers must
stay strictly increasing, high sampling must move strictly more input than
low) become bounds on the one-dimensional searches. The edge node speed is
not fitted: no reference policy computes there, so the table carries no
information about it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources

from scipy.optimize import minimize_scalar

from .edgesim import (
    BANDWIDTH_TIERS,
    SAMPLING_LEVELS,
    Topology,
    analytic_latency,
    default_pipelines,
    default_topology,
    named_placement,
    _three_stage,
)

__all__ = [
    "TargetRow",
    "FitResult",
    "load_targets",
    "default_params",
    "build_from_params",
    "evaluate_params",
    "calibrate",
]

_APPS = ("stress", "fall", "pain")
_POLICIES = ("local", "cloud", "partial")
_LINK_KEYS = {"device-edge": ("device", "edge"), "edge-cloud": ("edge", "cloud")}

# Strict-inequality margins used when constraints bound a search interval.
_BW_GAP = 1.001
_INPUT_GAP = 1.0001


@dataclass(frozen=True)
class TargetRow:
    app: str
    policy: str
    sampling: str
    bandwidth: str
    latency_s: float


@dataclass(frozen=True)
class FitResult:
    params: dict
    loss: float
    median_rel_err: float
    max_rel_err: float
    orderings_matched: int
    orderings_total: int
    per_target: tuple
    passes: int


def load_targets(path=None) -> tuple:
    """Reference latencies, from ``path`` or the packaged table."""
    if path is None:
        source = resources.files("edgehealth").joinpath("data/latency_targets.csv")
        text = source.read_text(encoding="utf-8")
        rows = list(csv.DictReader(text.splitlines()))
    else:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        app, policy = row["app"], row["policy"]
        sampling, bandwidth = row["sampling"], row["bandwidth"]
        if app not in _APPS:
            raise ValueError("target table names unknown app %r" % app)
        if policy not in _POLICIES:
            raise ValueError("target table names unknown policy %r" % policy)
        if sampling not in SAMPLING_LEVELS:
            raise ValueError("target table names unknown sampling %r" % sampling)
        if bandwidth not in BANDWIDTH_TIERS:
            raise ValueError("target table names unknown bandwidth %r" % bandwidth)
        latency = float(row["latency_s"])
        if latency <= 0:
            raise ValueError("non-positive target latency for %s/%s" % (app, policy))
        out.append(TargetRow(app, policy, sampling, bandwidth, latency))
    if not out:
        raise ValueError("target table is empty")
    return tuple(out)


def default_params() -> dict:
    """The fit's free parameters, read off the shipped defaults."""
    topo = default_topology()
    pipes = default_pipelines()
    params = {
        "speed.device": topo.nodes["device"].speed_mops_per_s,
        "speed.cloud": topo.nodes["cloud"].speed_mops_per_s,
    }
    for key, hop in _LINK_KEYS.items():
        for tier in BANDWIDTH_TIERS:
            params["bw.%s.%s" % (key, tier)] = topo.links[hop].bandwidth_mbps[tier]
    for app in _APPS:
        pipe = pipes[app]
        for level in SAMPLING_LEVELS:
            front = sum(s.compute_mops[level] for s in pipe.stages[:2])
            params["%s.%s.m12" % (app, level)] = front
            params["%s.%s.m3" % (app, level)] = pipe.stages[2].compute_mops[level]
            params["%s.%s.input_bytes" % (app, level)] = pipe.input_bytes[level]
            params["%s.%s.feat_bytes" % (app, level)] = pipe.stages[1].output_bytes[level]
    return params


def build_from_params(params: dict):
    """Materialize (topology, pipelines) for a parameter assignment.

    Energies, the edge speed, and the image-classifier pipeline are taken
    from the defaults unchanged; they are outside the fit.
    """
    base = default_topology()
    nodes = dict(base.nodes)
    for layer in ("device", "cloud"):
        spec = nodes[layer]
        nodes[layer] = type(spec)(
            spec.name, params["speed.%s" % layer], spec.energy_nj_per_mop
        )
    links = {}
    for key, hop in _LINK_KEYS.items():
        spec = base.links[hop]
        links[hop] = type(spec)(
            spec.src,
            spec.dst,
            {t: params["bw.%s.%s" % (key, t)] for t in BANDWIDTH_TIERS},
            spec.propagation_ms,
            spec.energy_nj_per_byte,
        )
    topology = Topology(nodes=nodes, links=links)

    pipelines = dict(default_pipelines())
    for app in _APPS:
        pipelines[app] = _three_stage(
            app,
            m12={lv: params["%s.%s.m12" % (app, lv)] for lv in SAMPLING_LEVELS},
            m3={lv: params["%s.%s.m3" % (app, lv)] for lv in SAMPLING_LEVELS},
            input_bytes={
                lv: int(round(params["%s.%s.input_bytes" % (app, lv)]))
                for lv in SAMPLING_LEVELS
            },
            feat_bytes={
                lv: int(round(params["%s.%s.feat_bytes" % (app, lv)]))
                for lv in SAMPLING_LEVELS
            },
        )
    return topology, pipelines


def evaluate_params(params: dict, targets) -> dict:
    """Model latency, relative error, and ordering agreement per target.

    Returns ``per_target`` rows plus the scalar loss (mean squared log
    error), the median and max relative error, and how many of the
    (app, sampling, bandwidth) cells rank the three policies in the same
    order as the reference table.
    """
    topology, pipelines = build_from_params(params)
    per_target = []
    loss = 0.0
    for row in targets:
        placement = named_placement(row.policy, pipelines[row.app].n_stages)
        model = analytic_latency(
            pipelines[row.app], placement, topology, row.bandwidth, row.sampling
        )
        loss += math.log(model / row.latency_s) ** 2
        per_target.append(
            {
                "app": row.app,
                "policy": row.policy,
                "sampling": row.sampling,
                "bandwidth": row.bandwidth,
                "target_s": row.latency_s,
                "model_s": model,
                "rel_err": abs(model - row.latency_s) / row.latency_s,
            }
        )
    loss /= len(targets)

    cells = {}
    for entry in per_target:
        cells.setdefault((entry["app"], entry["sampling"], entry["bandwidth"]), []).append(entry)
    matched = 0
    for members in cells.values():
        by_target = [m["policy"] for m in sorted(members, key=lambda m: m["target_s"])]
        by_model = [m["policy"] for m in sorted(members, key=lambda m: m["model_s"])]
        if by_target == by_model:
            matched += 1
    errs = sorted(e["rel_err"] for e in per_target)
    mid = len(errs) // 2
    median = errs[mid] if len(errs) % 2 else 0.5 * (errs[mid - 1] + errs[mid])
    return {
        "loss": loss,
        "median_rel_err": median,
        "max_rel_err": errs[-1],
        "orderings_matched": matched,
        "orderings_total": len(cells),
        "per_target": tuple(per_target),
    }


def _bounds(name: str, params: dict, span: float):
    """Log-space search interval for one parameter, honoring orderings."""
    cur = params[name]
    lo, hi = cur / math.exp(span), cur * math.exp(span)
    if name.startswith("bw."):
        prefix, tier = name.rsplit(".", 1)
        idx = BANDWIDTH_TIERS.index(tier)
        if idx > 0:
            lo = max(lo, params["%s.%s" % (prefix, BANDWIDTH_TIERS[idx - 1])] * _BW_GAP)
        if idx < len(BANDWIDTH_TIERS) - 1:
            hi = min(hi, params["%s.%s" % (prefix, BANDWIDTH_TIERS[idx + 1])] / _BW_GAP)
    elif name.endswith(".input_bytes"):
        app, level, _ = name.split(".")
        other = params["%s.%s.input_bytes" % (app, "low" if level == "high" else "high")]
        if level == "high":
            lo = max(lo, other * _INPUT_GAP)
        else:
            hi = min(hi, other / _INPUT_GAP)
    if name.endswith("_bytes"):
        lo = max(lo, 1.0)
    if hi <= lo:
        return None
    return math.log(lo), math.log(hi)


def calibrate(
    targets=None,
    init_params: dict | None = None,
    max_passes: int = 16,
    tol: float = 1e-8,
) -> FitResult:
    """Fit the cost model by cyclic coordinate descent in log space.

    Each pass sweeps every parameter once with a bounded scalar
    minimization; the search span starts at about a factor of seven each
    way and tightens as passes go, which lets early passes escape a bad
    initialization while late passes polish. Stops when a full pass
    improves the loss by less than ``tol``. Deterministic throughout: no
    randomness, fixed sweep order.
    """
    if targets is None:
        targets = load_targets()
    params = dict(default_params() if init_params is None else init_params)
    names = sorted(params)

    def loss_of(p):
        return evaluate_params(p, targets)["loss"]

    best = loss_of(params)
    span = 2.0
    passes_run = 0
    for _ in range(max_passes):
        passes_run += 1
        before = best
        for name in names:
            interval = _bounds(name, params, span)
            if interval is None:
                continue

            def objective(logv):
                trial = dict(params)
                trial[name] = math.exp(logv)
                return loss_of(trial)

            res = minimize_scalar(
                objective, bounds=interval, method="bounded",
                options={"xatol": 1e-5},
            )
            if res.fun < best:
                best = float(res.fun)
                params[name] = math.exp(float(res.x))
        span = max(span * 0.7, 0.25)
        if before - best < tol:
            break

    final = evaluate_params(params, targets)
    return FitResult(
        params=params,
        loss=final["loss"],
        median_rel_err=final["median_rel_err"],
        max_rel_err=final["max_rel_err"],
        orderings_matched=final["orderings_matched"],
        orderings_total=final["orderings_total"],
        per_target=final["per_target"],
        passes=passes_run,
    )
