"""Command-line surface.

Every subcommand is driven by a config (a JSON file or a named built-in
profile); individual flags override the output directory and the seeds.
Failures print one machine-readable line starting with ``ERROR `` to
stderr and exit nonzero.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import certkit, neuralfield, perturbkit, pipeline, simkit
from .errors import ContractError, DissnodeError

__all__ = ["main", "build_parser"]


def _add_config_flags(sub, with_seed=True):
    sub.add_argument("--config", help="config JSON file")
    sub.add_argument(
        "--profile", choices=["desk", "paper"], help="built-in recipe (default desk)"
    )
    sub.add_argument("--out", help="output directory (overrides the config)")
    if with_seed:
        sub.add_argument(
            "--seed",
            type=int,
            help="override dataset seeds: d1=SEED, d2=SEED+1, test=SEED+2",
        )


def _resolve_config(args):
    if getattr(args, "config", None):
        if getattr(args, "profile", None):
            raise ContractError("give either --config or --profile, not both")
        cfg = pipeline.load_config(args.config)
    else:
        cfg = pipeline.profile_config(getattr(args, "profile", None) or "desk")
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg = dataclasses.replace(
            cfg, seed_d1=seed, seed_d2=seed + 1, seed_test=seed + 2
        )
    return cfg


def _gen_sets(cfg, which):
    sets = {}
    if "d1" in which:
        sets["d1"] = simkit.generate_trajectories(
            cfg.system, cfg.n_traj, cfg.n_points, cfg.dt, cfg.u0_values,
            cfg.noise_var, cfg.seed_d1,
        )
    if "d2" in which:
        sets["d2"] = simkit.generate_trajectories(
            cfg.system, cfg.n_traj, cfg.n_points, cfg.dt, cfg.u0_values,
            cfg.noise_var, cfg.seed_d2,
        )
    if "test" in which:
        sets["test"] = simkit.generate_trajectories(
            cfg.system, 1, cfg.test_points, cfg.dt, (cfg.test_u0,), 0.0,
            cfg.seed_test,
        )
    return sets


def _out_dir(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_simulate(args):
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    sets = _gen_sets(cfg, ("d1", "d2", "test"))
    count = 0
    for label in ("d1", "d2"):
        for k, tr in enumerate(sets[label]):
            simkit.write_trajectory_csv(out / f"{label}_{k:02d}.csv", tr)
            count += 1
    simkit.write_trajectory_csv(out / "test.csv", sets["test"][0])
    count += 1
    print(f"wrote {count} trajectory files to {out}")
    return 0


def _cmd_train_baseline(args):
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    d1 = _gen_sets(cfg, ("d1",))["d1"]
    data1 = simkit.sample_collections(
        d1, cfg.m_collections, cfg.collection_length, cfg.seed_d1
    )
    net0 = neuralfield.init_mlp(
        cfg.layer_dims, cfg.hidden_activation(), seed=cfg.train_baseline.seed
    )
    net = neuralfield.train(net0, data1, cfg.train_baseline)
    neuralfield.save_model(out / "baseline_model.json", net)
    loss = neuralfield.evaluate_loss(net, data1, cfg.train_baseline)
    print(f"baseline model written to {out / 'baseline_model.json'}")
    print(f"training loss: {loss!r}")
    return 0


def _load_model_checked(args, cfg=None):
    if cfg is not None:
        pipeline.check_provenance(args.model, cfg)
    return neuralfield.load_model(args.model)


def _cmd_verify(args):
    cfg = pipeline.load_config(args.config) if args.config else None
    net = _load_model_checked(args, cfg)
    family = pipeline.parse_qsr(args.qsr, net.layer_dims[0])
    p22 = -float(args.p22) * np.eye(net.layer_dims[-1])
    cert = certkit.verify(net, family, p22)
    cert = dataclasses.replace(cert, net_digest=certkit.net_file_digest(args.model))
    model = Path(args.model)
    cert_path = Path(args.out) if args.out else model.parent / (
        model.stem + "_certificate.json"
    )
    certkit.save_certificate(cert_path, cert)
    print(
        f"feasible: {str(cert.feasible).lower()}  min_eig: {cert.min_eig_ml!r}"
        f"  eps: {cert.eps!r}  delta: {cert.delta!r}"
    )
    print(f"certificate written to {cert_path}")
    return 0


def _cmd_perturb(args):
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    net = _load_model_checked(args, cfg if args.config else None)
    family = pipeline.parse_qsr(cfg.qsr, net.layer_dims[0])
    res = perturbkit.perturb(net, family, cfg.p22, cfg.solver)
    neuralfield.save_model(out / "perturbed_model.json", res.net)
    cert = dataclasses.replace(
        res.certificate,
        net_digest=certkit.net_file_digest(out / "perturbed_model.json"),
    )
    certkit.save_certificate(out / "certificate.json", cert)
    perturbkit.write_trace(out / "solver_trace.csv", res.trace)
    print(
        f"feasible: {str(res.feasible).lower()}  norm: {res.perturbation_norm!r}"
        f"  iterations: {res.iterations}"
    )
    print(f"reason: {res.reason}")
    return 0


def _cmd_retrain_bias(args):
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    net = _load_model_checked(args, cfg if args.config else None)
    d2 = _gen_sets(cfg, ("d2",))["d2"]
    data2 = simkit.sample_collections(
        d2, cfg.m_collections, cfg.collection_length, cfg.seed_d2
    )
    before = neuralfield.evaluate_loss(net, data2, cfg.train_bias)
    final = neuralfield.train(net, data2, cfg.train_bias)
    after = neuralfield.evaluate_loss(final, data2, cfg.train_bias)
    neuralfield.save_model(out / "final_model.json", final)
    print(f"final model written to {out / 'final_model.json'}")
    print(f"loss: {before!r} -> {after!r}")
    return 0


def _cmd_pipeline(args):
    cfg = _resolve_config(args)
    rep = pipeline.run_pipeline(cfg)
    pres = rep.perturb_result
    print(
        f"certificate feasible: {str(pres.feasible).lower()}"
        f"  min_eig: {pres.certificate.min_eig_ml!r}"
    )
    print(f"perturbation norm: {pres.perturbation_norm!r}")
    print(
        "baseline indices:"
        f" eps {rep.baseline_indices.eps!r} delta {rep.baseline_indices.delta!r}"
    )
    labels = ["baseline", "perturbed", "final"]
    for label, m in zip(labels, rep.metrics["models"]):
        if m["error"] is not None:
            print(f"{label} rmse: rollout failed: {m['error']}")
        else:
            print(f"{label} rmse: {m['rmse']!r}")
    print(f"report: {Path(rep.out_dir) / pipeline.REPORT_FILE}")
    return 0


def _cmd_compare(args):
    cfg = _resolve_config(args)
    nets = []
    for path in args.model:
        if args.config:
            pipeline.check_provenance(path, cfg)
        nets.append(neuralfield.load_model(path))
    test = _gen_sets(cfg, ("test",))["test"][0]
    metrics = pipeline.compare_models(
        nets, test.samples[0], len(test) - 1, cfg.dt, test.samples
    )
    for path, m in zip(args.model, metrics["models"]):
        if m["error"] is not None:
            print(f"{path}: rollout failed: {m['error']}")
        else:
            chans = " ".join(repr(v) for v in m["rmse_per_channel"])
            print(f"{path}: rmse {m['rmse']!r} per-channel {chans}")
    print(f"pairwise rmse: {json.dumps(metrics['pairwise_rmse'])}")
    if args.out:
        doc = {"model_files": list(args.model), **metrics}
        with open(args.out, "w", encoding="ascii") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        print(f"metrics written to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dissnode",
        description="Train, certify, and minimally repair neural dynamics models.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("simulate", help="write benchmark trajectory CSVs")
    _add_config_flags(sub)
    sub.set_defaults(func=_cmd_simulate)

    sub = subs.add_parser("train-baseline", help="fit the unconstrained model")
    _add_config_flags(sub)
    sub.set_defaults(func=_cmd_train_baseline)

    sub = subs.add_parser("verify", help="search a certificate for a model file")
    sub.add_argument("--model", required=True, help="model JSON file")
    sub.add_argument("--qsr", default="strict_passivity", help="supply-rate selector")
    sub.add_argument("--p22", default="0.01", help="tail block scale s in -s*I")
    sub.add_argument("--out", help="certificate output path")
    sub.add_argument("--config", help="config JSON for provenance checking")
    sub.set_defaults(func=_cmd_verify)

    sub = subs.add_parser("perturb", help="move model weights onto the feasible set")
    sub.add_argument("--model", required=True, help="model JSON file")
    _add_config_flags(sub, with_seed=False)
    sub.set_defaults(func=_cmd_perturb)

    sub = subs.add_parser("retrain-bias", help="refit biases with frozen weights")
    sub.add_argument("--model", required=True, help="model JSON file")
    _add_config_flags(sub)
    sub.set_defaults(func=_cmd_retrain_bias)

    sub = subs.add_parser("pipeline", help="run all stages end to end")
    _add_config_flags(sub)
    sub.set_defaults(func=_cmd_pipeline)

    sub = subs.add_parser("compare", help="score models against the held-out input")
    sub.add_argument(
        "--model", action="append", required=True, help="model JSON file (repeatable)"
    )
    _add_config_flags(sub)
    sub.set_defaults(func=_cmd_compare)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DissnodeError, OSError, ValueError) as exc:
        line = json.dumps({"type": type(exc).__name__, "message": str(exc)})
        print("ERROR " + line, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
