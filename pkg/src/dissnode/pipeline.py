"""End-to-end identification runs and their on-disk artifacts.

A run has four stages: simulate the benchmark datasets, fit the baseline
network on the first dataset, move its weights onto the certificate
feasible set, then refit only the biases on the second dataset with the
weights frozen.  Every stage persists its artifacts as soon as they
exist, so an aborted run leaves the completed prefix on disk for
inspection.

All randomness flows from named seeds in the config; a run is
reproducible bit-for-bit, which is why stage wall-clock times live in
their own side file instead of the report.
"""

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import certkit, neuralfield, perturbkit, simkit
from .errors import ContractError, DataError, DissnodeError, PipelineError

__all__ = [
    "CONFIG_SCHEMA_VERSION",
    "REPORT_FORMAT",
    "PipelineConfig",
    "RunReport",
    "profile_config",
    "parse_qsr",
    "config_digest",
    "save_config",
    "load_config",
    "compare_models",
    "check_provenance",
    "run_pipeline",
]

CONFIG_SCHEMA_VERSION = 1
REPORT_FORMAT = "dissnode-report-1"

TIMINGS_FILE = "timings.json"
MANIFEST_FILE = "manifest.json"
REPORT_FILE = "report.json"


@dataclass(frozen=True)
class PipelineConfig:
    """One self-contained run recipe.

    The two training datasets must come from different seeds; the tail
    penalty block is stored as a scale and realized as -scale * I.
    """

    # system
    system: simkit.DuffingParams = simkit.DuffingParams()
    input_law: str = "case_study"
    # dataset recipe
    n_traj: int = 3
    n_points: int = 2000
    dt: float = 1e-3
    noise_var: float = 0.01
    m_collections: int = 20
    collection_length: int = 500
    u0_values: tuple = (0.0, 0.1, 0.2)
    seed_d1: int = 101
    seed_d2: int = 202
    seed_test: int = 303
    test_u0: float = 0.05
    test_points: int = 500
    # architecture
    layer_dims: tuple = (4, 16, 4)
    activation_kind: str = "leaky_relu"
    activation_param: float = 0.2
    # training
    train_baseline: neuralfield.TrainConfig = field(
        default_factory=lambda: neuralfield.TrainConfig(
            learning_rate=1e-2, epochs=60, batch_size=4, horizon=50, dt=1e-3, seed=1
        )
    )
    train_bias: neuralfield.TrainConfig = field(
        default_factory=lambda: neuralfield.TrainConfig(
            learning_rate=1e-2,
            epochs=30,
            batch_size=4,
            horizon=50,
            dt=1e-3,
            seed=2,
            trainable=neuralfield.TRAINABLE_BIASES,
        )
    )
    # certification
    qsr: str = "strict_passivity"
    p22_scale: float = 0.01
    solver: perturbkit.SolverConfig = field(default_factory=perturbkit.SolverConfig)
    # output
    out_dir: str = "run"

    def __post_init__(self):
        if self.input_law != "case_study":
            raise ContractError(f"unknown input law {self.input_law!r}")
        if self.seed_d1 == self.seed_d2:
            raise ContractError("the two training datasets need different seeds")
        if not self.p22_scale > 0.0:
            raise ContractError("p22_scale must be positive")
        if self.train_bias.trainable != neuralfield.TRAINABLE_BIASES:
            raise ContractError("bias retraining must freeze the weights")
        if self.collection_length < self.train_baseline.horizon + 1:
            raise ContractError("collections too short for the training horizon")
        if self.collection_length < self.train_bias.horizon + 1:
            raise ContractError("collections too short for the retraining horizon")
        object.__setattr__(self, "u0_values", tuple(float(v) for v in self.u0_values))
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))

    @property
    def p22(self):
        return -self.p22_scale * np.eye(self.layer_dims[-1])

    def hidden_activation(self):
        if self.activation_kind == "leaky_relu":
            return neuralfield.activation(self.activation_kind, self.activation_param)
        return neuralfield.activation(self.activation_kind)


def profile_config(name, **overrides):
    """Built-in run recipes: a desk-scale default and the full-size one."""
    if name == "desk":
        return PipelineConfig(**overrides)
    if name == "paper":
        base = dict(
            n_points=10000,
            m_collections=100,
            collection_length=6000,
            test_points=10000,
            train_baseline=neuralfield.TrainConfig(
                learning_rate=1e-2, epochs=200, batch_size=8, horizon=50, dt=1e-3, seed=1
            ),
            train_bias=neuralfield.TrainConfig(
                learning_rate=1e-2,
                epochs=100,
                batch_size=8,
                horizon=50,
                dt=1e-3,
                seed=2,
                trainable=neuralfield.TRAINABLE_BIASES,
            ),
        )
        base.update(overrides)
        return PipelineConfig(**base)
    raise ContractError(f"unknown profile {name!r}")


def parse_qsr(text, n0):
    """Supply-rate selector used by configs and the command line.

    'strict_passivity' selects the family search; the other forms are
    fixed presets: 'passivity', 'l2_gain:G', 'conicity:C:R',
    'sector:A:B', 'strict_passivity:EPS:DELTA'.  The output/input split
    is n0/2 each, so n0 must be even.
    """
    parts = str(text).split(":")
    kind = parts[0]
    if kind == "strict_passivity" and len(parts) == 1:
        return "strict_passivity"
    if n0 % 2 != 0:
        raise ContractError("state width must be even to split into output/input")
    half = n0 // 2
    try:
        args = [float(p) for p in parts[1:]]
    except ValueError as exc:
        raise ContractError(f"cannot parse supply-rate selector {text!r}") from exc
    if kind == "passivity" and not args:
        return certkit.qsr_preset("passivity", half, half)
    if kind == "l2_gain" and len(args) == 1:
        return certkit.qsr_preset("l2_gain", half, half, gamma=args[0])
    if kind == "conicity" and len(args) == 2:
        return certkit.qsr_preset("conicity", half, half, c=args[0], r=args[1])
    if kind == "sector" and len(args) == 2:
        return certkit.qsr_preset("sector", half, half, a=args[0], b=args[1])
    if kind == "strict_passivity" and len(args) == 2:
        return certkit.qsr_preset("strict_passivity", half, half, eps=args[0], delta=args[1])
    raise ContractError(f"cannot parse supply-rate selector {text!r}")


# ------------------------------------------------------------------ config IO


def _config_doc(cfg):
    doc = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "system": {"a": cfg.system.a, "b": cfg.system.b, "c": cfg.system.c},
        "input_law": cfg.input_law,
        "n_traj": cfg.n_traj,
        "n_points": cfg.n_points,
        "dt": cfg.dt,
        "noise_var": cfg.noise_var,
        "m_collections": cfg.m_collections,
        "collection_length": cfg.collection_length,
        "u0_values": list(cfg.u0_values),
        "seed_d1": cfg.seed_d1,
        "seed_d2": cfg.seed_d2,
        "seed_test": cfg.seed_test,
        "test_u0": cfg.test_u0,
        "test_points": cfg.test_points,
        "layer_dims": list(cfg.layer_dims),
        "activation_kind": cfg.activation_kind,
        "activation_param": cfg.activation_param,
        "train_baseline": dataclasses.asdict(cfg.train_baseline),
        "train_bias": dataclasses.asdict(cfg.train_bias),
        "qsr": cfg.qsr,
        "p22_scale": cfg.p22_scale,
        "solver": dataclasses.asdict(cfg.solver),
        "out_dir": cfg.out_dir,
    }
    return doc


def config_digest(cfg):
    """Hex digest identifying the run recipe.

    The output directory is excluded: the same recipe written to two
    places is the same recipe.
    """
    doc = _config_doc(cfg)
    doc.pop("out_dir")
    blob = json.dumps(doc, sort_keys=True).encode("ascii")
    return hashlib.sha256(blob).hexdigest()


def save_config(path, cfg):
    with open(path, "w", encoding="ascii") as fh:
        json.dump(_config_doc(cfg), fh, indent=1)
        fh.write("\n")


def load_config(path):
    try:
        with open(path, "r", encoding="ascii") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read config: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError("config must be a JSON object")
    version = doc.get("schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        raise DataError(
            f"config schema version {version!r} not supported "
            f"(expected {CONFIG_SCHEMA_VERSION})"
        )
    try:
        return PipelineConfig(
            system=simkit.DuffingParams(**doc["system"]),
            input_law=doc["input_law"],
            n_traj=doc["n_traj"],
            n_points=doc["n_points"],
            dt=doc["dt"],
            noise_var=doc["noise_var"],
            m_collections=doc["m_collections"],
            collection_length=doc["collection_length"],
            u0_values=tuple(doc["u0_values"]),
            seed_d1=doc["seed_d1"],
            seed_d2=doc["seed_d2"],
            seed_test=doc["seed_test"],
            test_u0=doc["test_u0"],
            test_points=doc["test_points"],
            layer_dims=tuple(doc["layer_dims"]),
            activation_kind=doc["activation_kind"],
            activation_param=doc["activation_param"],
            train_baseline=neuralfield.TrainConfig(**doc["train_baseline"]),
            train_bias=neuralfield.TrainConfig(**doc["train_bias"]),
            qsr=doc["qsr"],
            p22_scale=doc["p22_scale"],
            solver=perturbkit.SolverConfig(**doc["solver"]),
            out_dir=doc["out_dir"],
        )
    except KeyError as exc:
        raise DataError(f"config is missing field {exc}") from exc
    except TypeError as exc:
        raise DataError(f"malformed config: {exc}") from exc


# ------------------------------------------------------------------ metrics


def compare_models(models, z0, steps, dt, truth):
    """Fit metrics of each model against one ground-truth trajectory.

    Each model is rolled out from z0 for the given number of steps and
    scored channel by channel; a model whose rollout blows up gets its
    error recorded without aborting the others.  The pairwise table
    holds overall root-mean-square distances between model rollouts.
    """
    truth = np.asarray(truth, dtype=float)
    steps = int(steps)
    if truth.ndim != 2 or truth.shape[0] != steps + 1:
        raise ContractError("truth must have steps + 1 rows")
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (truth.shape[1],):
        raise ContractError("z0 width must match the truth trajectory")
    for net in models:
        if net.layer_dims[0] != truth.shape[1]:
            raise ContractError("model width does not match the truth trajectory")

    rollouts = []
    per_model = []
    for net in models:
        try:
            pred = neuralfield.rollout(net, z0, steps, dt).samples
        except DissnodeError as exc:
            per_model.append(
                {
                    "rmse_per_channel": None,
                    "max_abs_dev_per_channel": None,
                    "rmse": None,
                    "error": str(exc),
                }
            )
            rollouts.append(None)
            continue
        err = pred - truth
        per_model.append(
            {
                "rmse_per_channel": [
                    float(np.sqrt(np.mean(err[:, ch] ** 2)))
                    for ch in range(truth.shape[1])
                ],
                "max_abs_dev_per_channel": [
                    float(np.max(np.abs(err[:, ch]))) for ch in range(truth.shape[1])
                ],
                "rmse": float(np.sqrt(np.mean(err**2))),
                "error": None,
            }
        )
        rollouts.append(pred)
    n = len(models)
    pairwise = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if rollouts[i] is None or rollouts[j] is None:
                continue
            d = rollouts[i] - rollouts[j]
            pairwise[i][j] = float(np.sqrt(np.mean(d**2)))
    return {"models": per_model, "pairwise_rmse": pairwise}


# ------------------------------------------------------------------ provenance


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def check_provenance(path, cfg):
    """Refuse to use a run artifact under a config it was not made with.

    If a manifest sits next to the file, the file's digest must match
    its manifest entry and the manifest must carry this config's digest.
    Standalone files (no manifest) pass silently.
    """
    path = Path(path)
    manifest = path.parent / MANIFEST_FILE
    if not manifest.exists():
        return
    try:
        with open(manifest, "r", encoding="ascii") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"unreadable manifest: {exc}") from exc
    want = doc.get("files", {}).get(path.name)
    if want is not None and want != _file_digest(path):
        raise DataError(f"{path.name} does not match its manifest digest")
    if doc.get("config_digest") != config_digest(cfg):
        raise DataError("manifest was produced under a different config")


# ------------------------------------------------------------------ the run


@dataclass
class RunReport:
    """In-memory result of a full run; the JSON artifact mirrors it."""

    config_digest: str
    out_dir: str
    baseline: neuralfield.Mlp
    perturbed: neuralfield.Mlp
    final: neuralfield.Mlp
    baseline_indices: certkit.RelaxedIndices
    perturb_result: perturbkit.PerturbResult
    loss_before_retrain: float
    loss_after_retrain: float
    remark3_matrix_unchanged: bool
    metrics: dict
    artifacts: dict
    timings: dict


def _write_json(path, doc):
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def run_pipeline(cfg):
    """Execute the four stages and persist every artifact.

    Solver failure to reach feasibility is an expected, recorded outcome
    (the run continues into bias retraining with the returned weights);
    exceptions inside a stage abort the run with that stage's name,
    leaving the artifacts written so far in place.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_digest(cfg)
    save_config(out / "config.json", cfg)
    artifacts = {"config": "config.json"}
    timings = {}

    stage = "simulate"
    try:
        t0 = time.perf_counter()
        d1 = simkit.generate_trajectories(
            cfg.system, cfg.n_traj, cfg.n_points, cfg.dt, cfg.u0_values,
            cfg.noise_var, cfg.seed_d1,
        )
        d2 = simkit.generate_trajectories(
            cfg.system, cfg.n_traj, cfg.n_points, cfg.dt, cfg.u0_values,
            cfg.noise_var, cfg.seed_d2,
        )
        test = simkit.generate_trajectories(
            cfg.system, 1, cfg.test_points, cfg.dt, (cfg.test_u0,), 0.0,
            cfg.seed_test,
        )[0]
        names = []
        for label, trajs in (("d1", d1), ("d2", d2)):
            for k, tr in enumerate(trajs):
                name = f"{label}_{k:02d}.csv"
                simkit.write_trajectory_csv(out / name, tr)
                names.append(name)
        simkit.write_trajectory_csv(out / "test.csv", test)
        names.append("test.csv")
        artifacts["trajectories"] = names
        timings["simulate"] = time.perf_counter() - t0

        stage = "train_baseline"
        t0 = time.perf_counter()
        data1 = simkit.sample_collections(
            d1, cfg.m_collections, cfg.collection_length, cfg.seed_d1
        )
        net0 = neuralfield.init_mlp(
            cfg.layer_dims, cfg.hidden_activation(), seed=cfg.train_baseline.seed
        )
        baseline = neuralfield.train(net0, data1, cfg.train_baseline)
        neuralfield.save_model(out / "baseline_model.json", baseline)
        artifacts["baseline_model"] = "baseline_model.json"
        indices = certkit.relaxed_indices(baseline, cfg.p22)
        _write_json(
            out / "indices.json",
            {
                "eps": indices.eps,
                "delta": indices.delta,
                "objective": indices.objective,
                "multipliers": {
                    "per_layer": list(indices.multipliers.per_layer),
                    "lam": indices.multipliers.lam,
                },
                "min_eig_ml": indices.min_eig_ml,
            },
        )
        artifacts["baseline_indices"] = "indices.json"
        timings["train_baseline"] = time.perf_counter() - t0

        stage = "perturb"
        t0 = time.perf_counter()
        family = parse_qsr(cfg.qsr, cfg.layer_dims[0])
        pres = perturbkit.perturb(baseline, family, cfg.p22, cfg.solver)
        neuralfield.save_model(out / "perturbed_model.json", pres.net)
        cert = dataclasses.replace(
            pres.certificate,
            net_digest=certkit.net_file_digest(out / "perturbed_model.json"),
        )
        certkit.save_certificate(out / "certificate.json", cert)
        perturbkit.write_trace(out / "solver_trace.csv", pres.trace)
        artifacts["perturbed_model"] = "perturbed_model.json"
        artifacts["certificate"] = "certificate.json"
        artifacts["solver_trace"] = "solver_trace.csv"
        timings["perturb"] = time.perf_counter() - t0

        stage = "retrain_bias"
        t0 = time.perf_counter()
        data2 = simkit.sample_collections(
            d2, cfg.m_collections, cfg.collection_length, cfg.seed_d2
        )
        loss_before = neuralfield.evaluate_loss(pres.net, data2, cfg.train_bias)
        final = neuralfield.train(pres.net, data2, cfg.train_bias)
        loss_after = neuralfield.evaluate_loss(final, data2, cfg.train_bias)
        for a, b in zip(final.weights, pres.net.weights):
            if not np.array_equal(a, b):
                raise ContractError("bias retraining touched the weights")
        qsr_eval = perturbkit._family_qsr(pres.net, family)
        pb = certkit.PBlocks.theorem_blocks(qsr_eval, cfg.p22)
        ml_before = certkit.build_ml(pres.net, pb, cert.multipliers)
        ml_after = certkit.build_ml(final, pb, cert.multipliers)
        remark3 = bool(np.array_equal(ml_before, ml_after))
        neuralfield.save_model(out / "final_model.json", final)
        artifacts["final_model"] = "final_model.json"
        timings["retrain_bias"] = time.perf_counter() - t0

        stage = "report"
        t0 = time.perf_counter()
        metrics = compare_models(
            [baseline, pres.net, final],
            test.samples[0],
            len(test) - 1,
            cfg.dt,
            test.samples,
        )
        report_doc = {
            "format": REPORT_FORMAT,
            "config_digest": digest,
            "artifacts": artifacts,
            "baseline_indices": {
                "eps": indices.eps,
                "delta": indices.delta,
                "objective": indices.objective,
            },
            "perturbation": {
                "feasible": pres.feasible,
                "norm": pres.perturbation_norm,
                "iterations": pres.iterations,
                "reason": pres.reason,
                "min_eig_ml": cert.min_eig_ml,
                "eps": cert.eps,
                "delta": cert.delta,
            },
            "bias_retrain": {
                "loss_before": loss_before,
                "loss_after": loss_after,
            },
            "remark3_matrix_unchanged": remark3,
            "model_order": ["baseline", "perturbed", "final"],
            "metrics": metrics,
            "timings_file": TIMINGS_FILE,
        }
        _write_json(out / REPORT_FILE, report_doc)
        artifacts["report"] = REPORT_FILE
        manifest_files = {}
        for entry in artifacts.values():
            for name in entry if isinstance(entry, list) else [entry]:
                manifest_files[name] = _file_digest(out / name)
        _write_json(
            out / MANIFEST_FILE,
            {"config_digest": digest, "files": manifest_files},
        )
        timings["report"] = time.perf_counter() - t0
        _write_json(out / TIMINGS_FILE, timings)
    except PipelineError:
        raise
    except (DissnodeError, OSError) as exc:
        raise PipelineError(stage, str(exc)) from exc

    return RunReport(
        config_digest=digest,
        out_dir=str(out),
        baseline=baseline,
        perturbed=pres.net,
        final=final,
        baseline_indices=indices,
        perturb_result=pres,
        loss_before_retrain=loss_before,
        loss_after_retrain=loss_after,
        remark3_matrix_unchanged=remark3,
        metrics=metrics,
        artifacts=artifacts,
        timings=timings,
    )
