"""Command-line front end: one tool, seven subcommands, one artifact tree.

The workflow runs in dependency order::

    edgehealth generate    synthetic windows + feature tables per scenario
    edgehealth train-pool  train the closed model pool
    edgehealth adapt       quality-adaptive vs fixed pipeline, all scenarios
    edgehealth simulate    one execution-simulator run with a static policy
    edgehealth train-rl    placement agent + static sweep for comparison
    edgehealth calibrate   fit the latency model to the reference table
    edgehealth report      collect everything into figure-input tables

Every command reads one TOML configuration (packaged defaults, optionally
overlaid by ``--config``), derives all randomness from ``run.seed`` through
named sub-seeds, and writes into its own subdirectory of the output
directory. The output directory resolves from ``--out``, then the
``EDGEHEALTH_OUT`` environment variable, then ``run.out_dir``.

Artifacts are deterministic: running a command twice with the same
configuration produces byte-identical files. CSV files open with an audit
comment (tool version, configuration hash, root seed); JSON files carry the
same fields in their body. Exit status is 0 on success, 1 for a
configuration or usage problem, and 2 for a runtime failure, including a
missing upstream artifact, where the error names the command that produces
it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .adaptive import build_default_pool, run_scenario
from .calibrate import calibrate as fit_latency_model
from .config import Config, ConfigError, load_config
from .edgesim import (
    BANDWIDTH_TIERS,
    SAMPLING_LEVELS,
    WorkloadSpec,
    default_pipelines,
    default_topology,
    enumerate_placements,
    energy_of,
    simulate,
    write_trace_csv,
)
from .features import FEATURE_TEMPLATES, FeatureVector, extract_features, write_features_csv
from .models import FAMILY_COST_PER_FEATURE_MOPS, load_pool, save_pool
from .output import audit_header, write_csv, write_summary
from .quality import assess_modalities
from .rl import QTable, evaluate_greedy, save_qtable, sim_episode_env, train
from .seeding import child_seed
from .signals import generate_window, inject_noise, standard_scenarios

_POLICY_NAMES = ("local", "edge", "cloud", "partial")
_SCENARIO_IDS = ("S1", "S2", "S3", "S4")
_ADAPT_MODES = ("amser", "baseline")

_ADAPT_FIELDS = ("scenario", "mode", "seed", "accuracy", "latency_proxy",
                 "speedup", "data_bytes", "reduction")


class MissingArtifact(Exception):
    """An upstream artifact is absent; the message names its producer."""


def _missing(what: str, path, command: str) -> MissingArtifact:
    return MissingArtifact(
        "%s not found at %s; run `edgehealth %s` first" % (what, path, command)
    )


# ---------------------------------------------------------------------------
# shared pieces

def _scenarios(cfg: Config) -> dict:
    sig = cfg["signals"]
    modalities = tuple(sig["modalities"])
    artifact_on = tuple(sig["artifact_on"])
    for m in modalities:
        if m not in FEATURE_TEMPLATES:
            raise ConfigError(
                "signals.modalities: unknown modality %r; valid: %s"
                % (m, ", ".join(sorted(FEATURE_TEMPLATES)))
            )
    bad = [m for m in artifact_on if m not in modalities]
    if bad:
        raise ConfigError(
            "signals.artifact_on lists %r which is not in signals.modalities"
            % bad[0]
        )
    return standard_scenarios(
        modalities,
        wander_snr_db=sig["wander_snr_db"],
        artifact_duration_s=sig["artifact_duration_s"],
        artifact_amplitude_scale=sig["artifact_amplitude_scale"],
        artifact_on=artifact_on,
    )


def _reduced_counts(cfg: Config) -> dict:
    counts = cfg["featurize"]["reduced"]
    for m, v in counts.items():
        template = FEATURE_TEMPLATES.get(m)
        if template is None:
            raise ConfigError(
                "featurize.reduced: unknown modality %r; valid: %s"
                % (m, ", ".join(sorted(FEATURE_TEMPLATES)))
            )
        if not 1 <= v <= len(template):
            raise ConfigError(
                "featurize.reduced.%s must lie in [1, %d]" % (m, len(template))
            )
    return dict(counts)


def _pipeline(cfg: Config):
    pipelines = default_pipelines()
    app = cfg["edgesim"]["app"]
    if app not in pipelines:
        raise ConfigError(
            "edgesim.app: unknown application %r; valid: %s"
            % (app, ", ".join(sorted(pipelines)))
        )
    return pipelines[app]


def _check_edgesim(cfg: Config) -> dict:
    es = cfg["edgesim"]
    if es["bandwidth_tier"] not in BANDWIDTH_TIERS:
        raise ConfigError(
            "edgesim.bandwidth_tier: unknown tier %r; valid: %s"
            % (es["bandwidth_tier"], ", ".join(BANDWIDTH_TIERS))
        )
    if es["sampling_level"] not in SAMPLING_LEVELS:
        raise ConfigError(
            "edgesim.sampling_level: unknown level %r; valid: %s"
            % (es["sampling_level"], ", ".join(SAMPLING_LEVELS))
        )
    return es


def _workload(es: dict, users: int) -> WorkloadSpec:
    try:
        return WorkloadSpec(
            users=users, period_s=es["period_s"], duration_s=es["duration_s"],
            arrival=es["arrival"], jitter_frac=es["jitter_frac"],
        )
    except ValueError as exc:
        raise ConfigError("edgesim: %s" % exc) from None


def _read_artifact(path: Path, command: str, what: str):
    """Rows of a previously written CSV, audit header stripped."""
    if not path.exists():
        raise _missing(what, path, command)
    with open(path, newline="") as fh:
        line = fh.readline()
        while line.startswith("#"):
            line = fh.readline()
        reader = csv.DictReader(fh, fieldnames=line.strip().split(","))
        return list(reader)


def _read_summary(path: Path, command: str, what: str) -> dict:
    if not path.exists():
        raise _missing(what, path, command)
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# generate

def _generate_one(payload) -> tuple:
    """One scenario's dataset; module-level so worker processes can run it."""
    (sid, scenario, modalities, n_windows, window_s, seed, thetas) = payload
    vectors = []
    exemplar_rows = []
    quality = {}
    for i in range(n_windows):
        label = i % 2
        blocks = {}
        raw = {}
        for m in modalities:
            sig = generate_window(
                m, label, window_s,
                seed=child_seed(seed, "generate", sid, str(i), m),
            )
            spec = scenario.spec_for(m)
            if spec.kind != "none":
                sig = inject_noise(
                    sig, spec,
                    seed=child_seed(seed, "generate-noise", sid, str(i), m),
                )
            blocks[m] = extract_features(sig)
            if i == 0:
                raw[m] = sig
        vectors.append(FeatureVector("w%04d" % i, blocks, label))
        if i == 0:
            report = assess_modalities(raw, *thetas)
            for m in modalities:
                entry = report.entries[m]
                quality[m] = entry.label
                for t, v in zip(raw[m].times(), raw[m].samples):
                    exemplar_rows.append(
                        (m, entry.label, float(t), float(v))
                    )
    return sid, vectors, exemplar_rows, quality


def cmd_generate(cfg: Config, out: Path) -> dict:
    sig = cfg["signals"]
    scenarios = _scenarios(cfg)
    seed = cfg["run"]["seed"]
    thetas = (
        cfg["amser"]["theta_noisy_db"],
        cfg["amser"]["theta_drop_db"],
        cfg["amser"]["hysteresis_db"],
    )
    payloads = [
        (sid, scenarios[sid], tuple(sig["modalities"]), sig["n_windows"],
         sig["window_s"], seed, thetas)
        for sid in _SCENARIO_IDS
    ]
    jobs = cfg["run"]["jobs"]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(payloads))) as pool:
            results = list(pool.map(_generate_one, payloads))
    else:
        results = [_generate_one(p) for p in payloads]

    header = audit_header(cfg.sha, seed)
    per_scenario = {}
    for sid, vectors, exemplar_rows, quality in results:
        base = out / "datasets" / sid
        base.mkdir(parents=True, exist_ok=True)
        write_features_csv(vectors, base / "features.csv", header=header)
        write_csv(
            base / "exemplar.csv",
            ("modality", "quality", "time_s", "value"),
            exemplar_rows, config_sha=cfg.sha, seed=seed,
        )
        per_scenario[sid] = {
            "n_windows": len(vectors),
            "n_features": len(vectors[0].names()),
            "exemplar_quality": quality,
        }
    metrics = {"scenarios": per_scenario, "window_s": sig["window_s"]}
    write_summary(out / "datasets" / "summary.json", metrics,
                  config_sha=cfg.sha, seed=seed)
    print("generate: %d scenarios x %d windows -> %s"
          % (len(results), sig["n_windows"], out / "datasets"))
    return metrics


# ---------------------------------------------------------------------------
# train-pool

def cmd_train_pool(cfg: Config, out: Path) -> dict:
    family = cfg["pool"]["family"]
    if family not in FAMILY_COST_PER_FEATURE_MOPS:
        raise ConfigError(
            "pool.family: unknown family %r; valid: %s"
            % (family, ", ".join(sorted(FAMILY_COST_PER_FEATURE_MOPS)))
        )
    seed = cfg["run"]["seed"]
    pool = build_default_pool(
        n_windows=cfg["pool"]["n_windows"],
        seed=child_seed(seed, "train-pool"),
        family=family,
        window_s=cfg["signals"]["window_s"],
        wander_snr_db=cfg["signals"]["wander_snr_db"],
        reduced_counts=_reduced_counts(cfg),
    )
    pool.meta["config"] = cfg.sha
    pool.meta["tool_version"] = __version__
    pool_dir = out / "pool"
    save_pool(pool, pool_dir)

    accuracies = sorted(
        float(m.train_meta["holdout_accuracy"]) for m in pool.models.values()
    )
    metrics = {
        "family": family,
        "n_models": len(pool.models),
        "n_windows": cfg["pool"]["n_windows"],
        "holdout_accuracy_min": accuracies[0],
        "holdout_accuracy_max": accuracies[-1],
    }
    write_summary(pool_dir / "summary.json", metrics,
                  config_sha=cfg.sha, seed=seed)
    print("train-pool: %d models (%s) -> %s"
          % (len(pool.models), family, pool_dir))
    return metrics


# ---------------------------------------------------------------------------
# adapt

def _adapt_one(payload) -> tuple:
    """One (scenario, mode) run; loads the pool itself to stay cheap to ship."""
    (sid, scenario, mode, pool_dir, seeds, kwargs) = payload
    pool = load_pool(pool_dir)
    outcome = run_scenario(scenario, seeds, mode, pool, **kwargs)
    return sid, mode, outcome


def cmd_adapt(cfg: Config, out: Path) -> dict:
    pool_dir = out / "pool"
    if not (pool_dir / "manifest.json").exists():
        raise _missing("model pool", pool_dir, "train-pool")
    scenarios = _scenarios(cfg)
    am = cfg["amser"]
    seed = cfg["run"]["seed"]
    seeds = tuple(
        child_seed(seed, "adapt", "stream", str(k))
        for k in range(am["n_seeds"])
    )
    kwargs = {
        "n_windows": am["n_windows"],
        "window_s": cfg["signals"]["window_s"],
        "theta_noisy_db": am["theta_noisy_db"],
        "theta_drop_db": am["theta_drop_db"],
        "hysteresis_db": am["hysteresis_db"],
        "bytes_per_sample": am["bytes_per_sample"],
    }
    payloads = [
        (sid, scenarios[sid], mode, str(pool_dir), seeds, kwargs)
        for sid in _SCENARIO_IDS
        for mode in _ADAPT_MODES
    ]
    jobs = cfg["run"]["jobs"]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(payloads))) as ex:
            results = list(ex.map(_adapt_one, payloads))
    else:
        results = [_adapt_one(p) for p in payloads]

    rows = []
    per_scenario: dict = {}
    for sid, mode, outcome in results:
        for s in outcome.per_seed:
            rows.append((
                sid, mode, s.seed, s.accuracy, s.mean_latency_proxy_s,
                s.speedup_vs_baseline, s.data_volume_bytes,
                s.data_reduction_vs_baseline,
            ))
        per_scenario.setdefault(sid, {})[mode] = {
            "accuracy": outcome.accuracy,
            "latency_proxy_s": outcome.mean_latency_proxy_s,
            "speedup": outcome.speedup_vs_baseline,
            "data_bytes": outcome.data_volume_bytes,
            "reduction": outcome.data_reduction_vs_baseline,
            "n_windows": outcome.n_windows,
        }
    adapt_dir = out / "adapt"
    write_csv(adapt_dir / "outcomes.csv", _ADAPT_FIELDS, rows,
              config_sha=cfg.sha, seed=seed)
    metrics = {
        "scenarios": per_scenario,
        "n_seeds": am["n_seeds"],
        "n_windows": am["n_windows"],
    }
    write_summary(adapt_dir / "summary.json", metrics,
                  config_sha=cfg.sha, seed=seed)
    print("adapt: %d scenarios x %d modes x %d seeds -> %s"
          % (len(_SCENARIO_IDS), len(_ADAPT_MODES), am["n_seeds"],
             adapt_dir / "outcomes.csv"))
    return metrics


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(cfg: Config, out: Path) -> dict:
    es = _check_edgesim(cfg)
    pipeline = _pipeline(cfg)
    if es["policy"] not in _POLICY_NAMES:
        raise ConfigError(
            "edgesim.policy: unknown policy %r; valid policies: %s"
            % (es["policy"], ", ".join(_POLICY_NAMES))
        )
    seed = cfg["run"]["seed"]
    trace = simulate(
        pipeline, default_topology(), _workload(es, es["users"]), es["policy"],
        bandwidth_tier=es["bandwidth_tier"],
        sampling_level=es["sampling_level"],
        seed=child_seed(seed, "simulate"),
    )
    sim_dir = out / "sim"
    sim_dir.mkdir(parents=True, exist_ok=True)
    write_trace_csv(trace, sim_dir / "trace.csv",
                    header=audit_header(cfg.sha, seed))
    energy = energy_of(trace)
    metrics = {
        "app": es["app"],
        "policy": es["policy"],
        "users": es["users"],
        "n_requests": len(trace.records),
        "mean_response_s": trace.mean_response_s(),
        "max_response_s": trace.max_response_s(),
        "bytes_moved": int(sum(r.bytes_moved for r in trace.records)),
        "energy_total_nj": energy["total_nj"],
    }
    write_summary(sim_dir / "summary.json", metrics,
                  config_sha=cfg.sha, seed=seed)
    print("simulate: %d requests, mean response %.4f s -> %s"
          % (len(trace.records), trace.mean_response_s(),
             sim_dir / "trace.csv"))
    return metrics


# ---------------------------------------------------------------------------
# train-rl

def cmd_train_rl(cfg: Config, out: Path) -> dict:
    es = _check_edgesim(cfg)
    pipeline = _pipeline(cfg)
    rl = cfg["rl"]
    placements = enumerate_placements(pipeline.n_stages)
    seed = cfg["run"]["seed"]
    topology = default_topology()
    if not rl["user_counts"] or min(rl["user_counts"]) < 1:
        raise ConfigError("rl.user_counts must list positive user counts")
    if max(rl["user_counts"]) > rl["max_users"]:
        raise ConfigError("rl.user_counts exceeds rl.max_users")
    if not 0 <= rl["alpha"] <= 1:
        raise ConfigError("rl.alpha must lie in [0, 1]")
    if not 0 <= rl["gamma"] < 1:
        raise ConfigError("rl.gamma must lie in [0, 1)")
    if rl["episodes"] < 1:
        raise ConfigError("rl.episodes must be at least 1")
    if not 0 <= rl["eps_end"] <= rl["eps_start"] <= 1:
        raise ConfigError("rl: need 0 <= eps_end <= eps_start <= 1")
    if not rl["eval_seeds"]:
        raise ConfigError("rl.eval_seeds must not be empty")
    table = QTable.build(
        apps=(es["app"],), n_actions=len(placements),
        max_users=rl["max_users"], alpha=rl["alpha"], gamma=rl["gamma"],
    )
    env = sim_episode_env(
        pipeline, topology,
        bandwidth_tier=es["bandwidth_tier"],
        sampling_level=es["sampling_level"],
        user_counts=rl["user_counts"],
        period_s=es["period_s"], duration_s=es["duration_s"],
        jitter_frac=es["jitter_frac"], max_users=rl["max_users"],
    )
    table, curve = train(
        table, env, episodes=rl["episodes"],
        seed=child_seed(seed, "train-rl"),
        eps_start=rl["eps_start"], eps_end=rl["eps_end"],
    )

    rl_dir = out / "rl"
    rl_dir.mkdir(parents=True, exist_ok=True)
    header = audit_header(cfg.sha, seed)
    save_qtable(table, rl_dir / "qtable.csv", header=header)
    counts = rl["user_counts"]
    write_csv(
        rl_dir / "curve.csv",
        ("episode", "users", "mean_response_s"),
        [(k, counts[k % len(counts)], v) for k, v in enumerate(curve)],
        config_sha=cfg.sha, seed=seed,
    )

    # Static sweep plus the frozen greedy policy, for the comparison figure.
    eval_seeds = tuple(rl["eval_seeds"])
    sweep_rows = []
    best_static: dict = {}
    learned: dict = {}
    for users in counts:
        for placement in placements:
            means = []
            for s in eval_seeds:
                trace = simulate(
                    pipeline, topology, _workload(es, users), placement,
                    bandwidth_tier=es["bandwidth_tier"],
                    sampling_level=es["sampling_level"], seed=s,
                )
                means.append(trace.mean_response_s())
            mean = sum(means) / len(means)
            sweep_rows.append((users, "|".join(placement), mean))
            key = str(users)
            if key not in best_static or mean < best_static[key]:
                best_static[key] = mean
        learned[str(users)] = evaluate_greedy(
            table, pipeline, topology,
            bandwidth_tier=es["bandwidth_tier"],
            sampling_level=es["sampling_level"],
            users=users, period_s=es["period_s"],
            duration_s=es["duration_s"], seeds=eval_seeds,
            jitter_frac=es["jitter_frac"], max_users=rl["max_users"],
        )
        sweep_rows.append((users, "rl", learned[str(users)]))
    write_csv(rl_dir / "sweep.csv", ("users", "policy", "mean_response_s"),
              sweep_rows, config_sha=cfg.sha, seed=seed)

    visited = sum(
        1 for state in table.visits if any(v > 0 for v in table.visits[state])
    )
    ratios = {u: learned[u] / best_static[u] for u in learned}
    metrics = {
        "episodes": rl["episodes"],
        "n_states": len(table),
        "states_visited": visited,
        "best_static_mean_response_s": best_static,
        "rl_mean_response_s": learned,
        "rl_vs_best_static": ratios,
        "worst_ratio": max(ratios.values()),
    }
    write_summary(rl_dir / "summary.json", metrics,
                  config_sha=cfg.sha, seed=seed)
    print("train-rl: %d episodes, worst ratio vs best static %.4f -> %s"
          % (rl["episodes"], metrics["worst_ratio"], rl_dir))
    return metrics


# ---------------------------------------------------------------------------
# calibrate

def cmd_calibrate(cfg: Config, out: Path) -> dict:
    max_passes = cfg["calibrate"]["max_passes"]
    if max_passes < 1:
        raise ConfigError("calibrate.max_passes must be at least 1")
    fit = fit_latency_model(max_passes=max_passes)
    cal_dir = out / "calibrate"
    seed = cfg["run"]["seed"]
    write_csv(
        cal_dir / "fit.csv",
        ("app", "policy", "sampling", "bandwidth", "target_s", "model_s",
         "rel_err"),
        [
            (r["app"], r["policy"], r["sampling"], r["bandwidth"],
             r["target_s"], r["model_s"], r["rel_err"])
            for r in fit.per_target
        ],
        config_sha=cfg.sha, seed=seed,
    )
    write_csv(
        cal_dir / "params.csv", ("param", "value"),
        sorted(fit.params.items()), config_sha=cfg.sha, seed=seed,
    )
    metrics = {
        "loss": fit.loss,
        "median_rel_err": fit.median_rel_err,
        "max_rel_err": fit.max_rel_err,
        "orderings_matched": fit.orderings_matched,
        "orderings_total": fit.orderings_total,
        "passes": fit.passes,
        "n_targets": len(fit.per_target),
    }
    write_summary(cal_dir / "summary.json", metrics,
                  config_sha=cfg.sha, seed=seed)
    print("calibrate: median %.1f%% max %.1f%% orderings %d/%d -> %s"
          % (100 * fit.median_rel_err, 100 * fit.max_rel_err,
             fit.orderings_matched, fit.orderings_total, cal_dir))
    return metrics


# ---------------------------------------------------------------------------
# report

def cmd_report(cfg: Config, out: Path) -> dict:
    seed = cfg["run"]["seed"]
    rep_dir = out / "report"

    fit_rows = _read_artifact(
        out / "calibrate" / "fit.csv", "calibrate", "latency fit table"
    )
    write_csv(
        rep_dir / "fig8.csv",
        ("app", "policy", "sampling", "bandwidth", "target_s", "model_s"),
        [
            (r["app"], r["policy"], r["sampling"], r["bandwidth"],
             r["target_s"], r["model_s"])
            for r in fit_rows
        ],
        config_sha=cfg.sha, seed=seed,
    )

    sweep_rows = _read_artifact(
        out / "rl" / "sweep.csv", "train-rl", "placement sweep table"
    )
    write_csv(
        rep_dir / "fig10.csv", ("users", "policy", "mean_response_s"),
        [(r["users"], r["policy"], r["mean_response_s"]) for r in sweep_rows],
        config_sha=cfg.sha, seed=seed,
    )
    curve_rows = _read_artifact(
        out / "rl" / "curve.csv", "train-rl", "learning curve"
    )
    write_csv(
        rep_dir / "rl_curve.csv", ("episode", "users", "mean_response_s"),
        [(r["episode"], r["users"], r["mean_response_s"])
         for r in curve_rows],
        config_sha=cfg.sha, seed=seed,
    )

    adapt = _read_summary(
        out / "adapt" / "summary.json", "adapt", "adaptation summary"
    )
    scenarios = adapt["metrics"]["scenarios"]
    fig13 = []
    fig14 = []
    for sid in _SCENARIO_IDS:
        if sid not in scenarios:
            raise _missing("adaptation results for %s" % sid,
                           out / "adapt" / "summary.json", "adapt")
        for mode in _ADAPT_MODES:
            fig13.append((sid, mode, scenarios[sid][mode]["accuracy"]))
        fig14.append((
            sid,
            scenarios[sid]["amser"]["speedup"],
            scenarios[sid]["amser"]["reduction"],
        ))
    write_csv(rep_dir / "fig13.csv", ("scenario", "mode", "accuracy"),
              fig13, config_sha=cfg.sha, seed=seed)
    write_csv(rep_dir / "fig14.csv", ("scenario", "speedup", "data_reduction"),
              fig14, config_sha=cfg.sha, seed=seed)

    overlay = []
    for sid in _SCENARIO_IDS:
        rows = _read_artifact(
            out / "datasets" / sid / "exemplar.csv", "generate",
            "exemplar signals for %s" % sid,
        )
        for r in rows:
            overlay.append((sid, r["modality"], r["quality"],
                            r["time_s"], r["value"]))
    write_csv(
        rep_dir / "signal_overlay.csv",
        ("scenario", "modality", "quality", "time_s", "value"),
        overlay, config_sha=cfg.sha, seed=seed,
    )

    metrics = {
        "tables": {
            "fig8.csv": len(fit_rows),
            "fig10.csv": len(sweep_rows),
            "fig13.csv": len(fig13),
            "fig14.csv": len(fig14),
            "rl_curve.csv": len(curve_rows),
            "signal_overlay.csv": len(overlay),
        }
    }
    write_summary(rep_dir / "summary.json", metrics,
                  config_sha=cfg.sha, seed=seed)
    print("report: %d tables -> %s" % (len(metrics["tables"]), rep_dir))
    return metrics


# ---------------------------------------------------------------------------
# argument handling

_COMMANDS = {
    "generate": cmd_generate,
    "train-pool": cmd_train_pool,
    "adapt": cmd_adapt,
    "simulate": cmd_simulate,
    "train-rl": cmd_train_rl,
    "calibrate": cmd_calibrate,
    "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    """Usage problems raise instead of exiting, so main() owns the code."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="TOML configuration overlaying the defaults")
    common.add_argument("--seed", type=int, metavar="N",
                        help="override run.seed")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (falls back to $EDGEHEALTH_OUT,"
                             " then run.out_dir)")
    common.add_argument("--jobs", type=int, metavar="K",
                        help="worker processes for fan-out commands")

    parser = _Parser(
        prog="edgehealth",
        description="Deterministic desk-scale study of an adaptive edge "
                    "health pipeline.",
    )
    parser.add_argument("--version", action="version",
                        version="edgehealth %s" % __version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND",
                                parser_class=_Parser)
    helps = {
        "generate": "synthesize scenario datasets and feature tables",
        "train-pool": "train the closed model pool",
        "adapt": "run quality-adaptive and fixed pipelines over all scenarios",
        "simulate": "run one workload under a static placement policy",
        "train-rl": "train the placement agent and sweep static policies",
        "calibrate": "fit the latency model against the reference table",
        "report": "aggregate artifacts into figure-input tables",
    }
    for name, func in _COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=helps[name])
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.error("a command is required")
        out_flag = args.out if args.out is not None else os.environ.get(
            "EDGEHEALTH_OUT"
        )
        cfg = load_config(
            args.config, seed=args.seed, out_dir=out_flag, jobs=args.jobs
        )
    except ConfigError as exc:
        print("edgehealth: error: %s" % exc, file=sys.stderr)
        return 1
    out = Path(cfg["run"]["out_dir"])
    try:
        args.func(cfg, out)
    except ConfigError as exc:
        print("edgehealth: error: %s" % exc, file=sys.stderr)
        return 1
    except MissingArtifact as exc:
        print("edgehealth: error: %s" % exc, file=sys.stderr)
        return 2
    except Exception as exc:
        print("edgehealth: error: %s" % exc, file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
