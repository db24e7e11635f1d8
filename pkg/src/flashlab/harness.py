"""Config-driven experiment runs that reduce to one flat CSV schema.

A sweep walks operating points, stands up the requested detectors (sharing
one pre-trained source model across points), measures raw bit error rates on
a fixed test set, and emits ``cell,family,n_pe,t_hours,detector,metric,value,
seed,config_hash`` rows.  Coded sweeps push the same detectors through the
LDPC pipeline; the size study retrains at several training-set sizes and
reports min/median/max over trials.
"""

from __future__ import annotations

import concurrent.futures
import configparser
import csv
import dataclasses
import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ecc, transfer
from .channel import (
    DomainDataset,
    GrayMap,
    NoiseFamily,
    OperatingPoint,
    make_dataset,
    params_for_cell,
    state_moments,
)
from .detect import DpConfig, derive_thresholds_dp, rnn_detect, threshold_detect
from .neuralnet import NetworkParams, TrainConfig, init_xavier, train
from .oracle import ThresholdSet, ber_two_bit, mmi_thresholds, optimal_thresholds

__all__ = [
    "ExperimentConfig",
    "parse_experiment_config",
    "config_hash",
    "CSV_COLUMNS",
    "run_rber_sweep",
    "run_coded_sweep",
    "run_training_size_study",
    "write_rows",
]

CSV_COLUMNS = (
    "cell",
    "family",
    "n_pe",
    "t_hours",
    "detector",
    "metric",
    "value",
    "seed",
    "config_hash",
)

KNOWN_DETECTORS = (
    "optimal",
    "mmi",
    "source",
    "target_rnna",
    "model_dtl",
    "uda_dtl",
    "uda_threshold",
)

# Detectors that need the pre-trained source network.
_NEEDS_SOURCE_MODEL = {"source", "model_dtl", "uda_dtl", "uda_threshold"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment settings; see `parse_experiment_config`."""

    cell: str = "mlc"
    family: str = "gaussian"
    seed: int = 0
    output: str = "results.csv"
    jobs: int = 1
    source_n_pe: float = 0.0
    source_t_hours: float = 0.0
    source_train: int = 200_000
    target_train: int = 10_000
    test_samples: int = 1_000_000
    sweep_n_pe: tuple[float, ...] = (10_000.0,)
    sweep_t_hours: tuple[float, ...] = (10_000.0,)
    detectors: tuple[str, ...] = (
        "optimal",
        "source",
        "model_dtl",
        "uda_dtl",
        "uda_threshold",
    )
    dp_m: int = 200
    window: int = 20
    epochs: int = 50
    batch_size: int = 20
    learning_rate: float = 1e-3
    uda_train: int = 0  # 0 = reuse the full source set
    code_source: str = "builtin"
    frames: int = 200
    alpha: float = 0.75
    max_iter: int = 20
    study_sizes: tuple[int, ...] = (2_000, 10_000, 50_000)
    study_trials: int = 10
    study_detector: str = "target_rnna"

    def __post_init__(self) -> None:
        if self.cell not in ("mlc", "tlc", "qlc"):
            raise ValueError(f"experiment.cell: unknown cell {self.cell!r}")
        if self.family not in ("gaussian", "gamma"):
            raise ValueError(f"experiment.family: unknown family {self.family!r}")
        unknown = set(self.detectors) - set(KNOWN_DETECTORS)
        if unknown:
            raise ValueError(
                f"detect.detectors: unknown names {sorted(unknown)}; "
                f"known: {', '.join(KNOWN_DETECTORS)}"
            )
        if self.study_detector not in ("target_rnna", "model_dtl"):
            raise ValueError(
                f"study.detector: must be target_rnna or model_dtl, "
                f"got {self.study_detector!r}"
            )
        for name in ("source_train", "target_train", "test_samples", "frames"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


# section -> key -> (config field, converter)
def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(float(tok)) for tok in s.replace(",", " ").split())


def _float_list(s: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in s.replace(",", " ").split())


def _str_list(s: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in s.replace(",", " ").split())


_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "experiment": {
        "cell": ("cell", str),
        "family": ("family", str),
        "seed": ("seed", int),
        "output": ("output", str),
        "jobs": ("jobs", int),
    },
    "source": {
        "n_pe": ("source_n_pe", float),
        "t_hours": ("source_t_hours", float),
        "train_samples": ("source_train", int),
    },
    "target": {
        "train_samples": ("target_train", int),
        "test_samples": ("test_samples", int),
    },
    "sweep": {
        "n_pe": ("sweep_n_pe", _float_list),
        "t_hours": ("sweep_t_hours", _float_list),
    },
    "detect": {
        "detectors": ("detectors", _str_list),
        "dp_m": ("dp_m", int),
        "window": ("window", int),
    },
    "train": {
        "epochs": ("epochs", int),
        "batch_size": ("batch_size", int),
        "learning_rate": ("learning_rate", float),
        "uda_train_samples": ("uda_train", int),
    },
    "code": {
        "source": ("code_source", str),
        "frames": ("frames", int),
        "alpha": ("alpha", float),
        "max_iter": ("max_iter", int),
    },
    "study": {
        "sizes": ("study_sizes", _int_list),
        "trials": ("study_trials", int),
        "detector": ("study_detector", str),
    },
}


def parse_experiment_config(path: str | Path) -> ExperimentConfig:
    """Read an INI-style experiment file; every key is optional.

    Unknown sections or keys raise ValueError naming the offending
    ``section.key``.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    text = Path(path).read_text()
    parser.read_string(text, source=str(path))
    fields: dict[str, object] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ValueError(f"{path}: unknown key {section}.{key}")
            field_name, convert = _SCHEMA[section][key]
            try:
                fields[field_name] = convert(raw)  # type: ignore[operator]
            except ValueError as exc:
                raise ValueError(f"{path}: bad value for {section}.{key}: {exc}") from None
    return ExperimentConfig(**fields)  # type: ignore[arg-type]


def config_hash(config: ExperimentConfig) -> str:
    """Stable short hash of every resolved field."""
    canonical = ";".join(
        f"{f.name}={getattr(config, f.name)!r}"
        for f in sorted(dataclasses.fields(config), key=lambda f: f.name)
    )
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def resolve_output(config: ExperimentConfig) -> Path:
    """Output CSV path; FLASHLAB_OUTPUT_DIR overrides the directory."""
    out = Path(config.output)
    override = os.environ.get("FLASHLAB_OUTPUT_DIR")
    if override:
        out = Path(override) / out.name
    return out


def write_rows(rows: list[dict], path: str | Path) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def _bit_errors(detected: np.ndarray, truth: np.ndarray, gray: GrayMap) -> float:
    bits = gray.bits()
    return float(np.mean(bits[detected] != bits[truth]))


def _seed_for(config: ExperimentConfig, *tags: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([config.seed, *tags])


def _train_config(config: ExperimentConfig, seed_seq: np.random.SeedSequence) -> TrainConfig:
    return TrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size,
        window=config.window,
        learning_rate=config.learning_rate,
        seed=int(seed_seq.generate_state(1)[0]),
    )


class SweepContext:
    """Source-domain assets shared by every sweep point, built lazily."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.params = params_for_cell(config.cell)
        self.gray = GrayMap.for_q(self.params.q)
        self.source_op = OperatingPoint(
            config.source_n_pe, config.source_t_hours, NoiseFamily.GAUSSIAN
        )
        self._source_data: DomainDataset | None = None
        self._source_model: NetworkParams | None = None
        self._source_thresholds: ThresholdSet | None = None
        self._source_means: np.ndarray | None = None

    @property
    def target_family(self) -> NoiseFamily:
        return NoiseFamily(self.config.family)

    @property
    def source_data(self) -> DomainDataset:
        if self._source_data is None:
            seed = _seed_for(self.config, 0, 1)
            self._source_data = make_dataset(
                self.params, self.config.source_train, self.source_op,
                int(seed.generate_state(1)[0]),
            )
        return self._source_data

    @property
    def source_model(self) -> NetworkParams:
        if self._source_model is None:
            cfg = _train_config(self.config, _seed_for(self.config, 0, 2))
            init = init_xavier(int(_seed_for(self.config, 0, 3).generate_state(1)[0]))
            self._source_model, _ = train(self.source_data, cfg, init)
        return self._source_model

    @property
    def source_thresholds(self) -> ThresholdSet:
        if self._source_thresholds is None:
            self._source_thresholds = self.derive_rnna_thresholds(
                self.source_model, self.source_data.voltages
            )
        return self._source_thresholds

    @property
    def source_state_means(self) -> np.ndarray:
        if self._source_means is None:
            self._source_means = transfer.source_means(self.source_data)
        return self._source_means

    def derive_rnna_thresholds(
        self, model: NetworkParams, voltages: np.ndarray
    ) -> ThresholdSet:
        decisions = rnn_detect(model, voltages, self.params.q, self.config.window)
        return derive_thresholds_dp(
            voltages, decisions, DpConfig(m=self.config.dp_m),
            n_states=self.params.n_states,
        )

    def warm_up(self, detectors: tuple[str, ...]) -> None:
        """Materialize shared assets before any worker processes fork off."""
        if _NEEDS_SOURCE_MODEL & set(detectors):
            self.source_model
            self.source_thresholds
            self.source_state_means


def _point_thresholds(
    ctx: SweepContext, config: ExperimentConfig, point_idx: int, target_op: OperatingPoint
) -> dict[str, object]:
    """Build every requested detector for one operating point.

    Returns name -> ThresholdSet, or a callable for detectors that transform
    the reads themselves.
    """
    params, gray = ctx.params, ctx.gray
    moments = state_moments(params, target_op)
    built: dict[str, object] = {}
    nominal = np.asarray(params.nominal_voltages)
    labeled_target: DomainDataset | None = None

    def target_train_set() -> DomainDataset:
        nonlocal labeled_target
        if labeled_target is None:
            seed = int(_seed_for(config, 1, point_idx, 0).generate_state(1)[0])
            labeled_target = make_dataset(
                params, config.target_train, target_op, seed
            )
        return labeled_target

    for name in config.detectors:
        if name == "optimal":
            built[name] = optimal_thresholds(moments)
        elif name == "mmi":
            built[name] = mmi_thresholds(moments)
        elif name == "source":
            built[name] = ctx.source_thresholds
        elif name == "target_rnna":
            ds = target_train_set()
            cfg = _train_config(config, _seed_for(config, 1, point_idx, 1))
            init = init_xavier(
                int(_seed_for(config, 1, point_idx, 2).generate_state(1)[0])
            )
            model, _ = train(ds, cfg, init)
            built[name] = ctx.derive_rnna_thresholds(model, ds.voltages)
        elif name == "model_dtl":
            ds = target_train_set()
            cfg = _train_config(config, _seed_for(config, 1, point_idx, 3))
            model = transfer.model_based_dtl(
                ctx.source_data, ds, cfg, cfg, init_params=ctx.source_model,
                source_params=ctx.source_model,
            )
            built[name] = ctx.derive_rnna_thresholds(model, ds.voltages)
        elif name == "uda_dtl":
            seed = int(_seed_for(config, 1, point_idx, 4).generate_state(1)[0])
            unlabeled = make_dataset(
                params, config.target_train, target_op, seed, labeled=False
            )
            source_ds = ctx.source_data
            if config.uda_train and config.uda_train < len(source_ds):
                source_ds = DomainDataset(
                    voltages=source_ds.voltages[: config.uda_train],
                    labels=source_ds.labels[: config.uda_train],
                    op_point=source_ds.op_point,
                    truth=source_ds.truth[: config.uda_train],
                )
            cfg = _train_config(config, _seed_for(config, 1, point_idx, 5))
            model, shifted = transfer.uda_dtl(
                source_ds, unlabeled, cfg, cfg, init_params=ctx.source_model,
                initial_centroids=nominal, source_params=ctx.source_model,
            )
            built[name] = ctx.derive_rnna_thresholds(model, shifted)
        elif name == "uda_threshold":
            means = ctx.source_state_means
            src_thresholds = ctx.source_thresholds

            def detect_fn(v, _m=means, _t=src_thresholds, _c=nominal):
                return transfer.uda_threshold_detect(_m, _t, v, _c)

            built[name] = detect_fn
    return built


def _detect_with(built: object, voltages: np.ndarray) -> np.ndarray:
    if isinstance(built, ThresholdSet):
        return threshold_detect(built, voltages)
    return built(voltages)  # type: ignore[operator]


def _run_rber_point(ctx: SweepContext, point_idx: int, n_pe: float, t_hours: float) -> list[dict]:
    config = ctx.config
    target_op = OperatingPoint(n_pe, t_hours, ctx.target_family)
    moments = state_moments(ctx.params, target_op)
    chash = config_hash(config)

    def row(detector: str, metric: str, value: float) -> dict:
        return {
            "cell": config.cell,
            "family": config.family,
            "n_pe": n_pe,
            "t_hours": t_hours,
            "detector": detector,
            "metric": metric,
            "value": value,
            "seed": config.seed,
            "config_hash": chash,
        }

    rows = [
        row(
            "optimal",
            "rber_analytic",
            ber_two_bit(moments, optimal_thresholds(moments), ctx.gray),
        )
    ]
    built = _point_thresholds(ctx, config, point_idx, target_op)
    test_seed = int(_seed_for(config, 2, point_idx).generate_state(1)[0])
    test = make_dataset(ctx.params, config.test_samples, target_op, test_seed)
    n_bits = config.test_samples * ctx.params.q
    for name in config.detectors:
        detected = _detect_with(built[name], test.voltages)
        rber = _bit_errors(detected, test.truth, ctx.gray)
        rows.append(row(name, "rber", rber))
        half_width = 1.96 * np.sqrt(max(rber * (1.0 - rber), 1e-300) / n_bits)
        rows.append(row(name, "rber_ci95_half_width", half_width))
    return rows


def run_rber_sweep(config: ExperimentConfig) -> list[dict]:
    """Raw bit-error-rate sweep over every (n_pe, t_hours) pair."""
    ctx = SweepContext(config)
    ctx.warm_up(config.detectors)
    points = [
        (i, npe, th)
        for i, (npe, th) in enumerate(
            (a, b) for a in config.sweep_n_pe for b in config.sweep_t_hours
        )
    ]
    if config.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(config.jobs) as pool:
            chunks = pool.map(_rber_point_task, [(ctx, p) for p in points])
            return [r for chunk in chunks for r in chunk]
    return [r for p in points for r in _run_rber_point(ctx, *p)]


def _rber_point_task(args):
    ctx, point = args
    return _run_rber_point(ctx, *point)


def _load_code(config: ExperimentConfig) -> ecc.ParityCheckMatrix:
    if config.code_source == "builtin":
        return ecc.make_parity_check(seed=config.seed + 1)
    return ecc.load_alist(config.code_source)


def _run_coded_point(
    ctx: SweepContext,
    pcm: ecc.ParityCheckMatrix,
    encoder: ecc.Encoder,
    point_idx: int,
    n_pe: float,
    t_hours: float,
) -> list[dict]:
    config = ctx.config
    target_op = OperatingPoint(n_pe, t_hours, ctx.target_family)
    chash = config_hash(config)
    built = _point_thresholds(ctx, config, point_idx, target_op)
    rows = []
    for name in config.detectors:
        result = ecc.coded_ber_experiment(
            ctx.params,
            target_op,
            pcm,
            lambda v, b=built[name]: _detect_with(b, v),
            frames=config.frames,
            seed=int(_seed_for(config, 3, point_idx).generate_state(1)[0]),
            gray_map=ctx.gray,
            alpha=config.alpha,
            max_iter=config.max_iter,
            encoder=encoder,
        )
        base = {
            "cell": config.cell,
            "family": config.family,
            "n_pe": n_pe,
            "t_hours": t_hours,
            "detector": name,
            "seed": config.seed,
            "config_hash": chash,
        }
        rows.append({**base, "metric": "raw_ber", "value": result.raw_ber})
        rows.append({**base, "metric": "coded_ber", "value": result.coded_ber})
        rows.append(
            {**base, "metric": "frame_error_rate",
             "value": result.frame_errors / result.frames}
        )
        rows.append(
            {**base, "metric": "decode_failure_rate",
             "value": result.decode_failures / result.frames}
        )
    return rows


def run_coded_sweep(config: ExperimentConfig) -> list[dict]:
    """LDPC-coded sweep: every detector feeds the same decoder."""
    ctx = SweepContext(config)
    ctx.warm_up(config.detectors)
    pcm = _load_code(config)
    encoder = ecc.build_encoder(pcm)
    rows = []
    for i, (npe, th) in enumerate(
        (a, b) for a in config.sweep_n_pe for b in config.sweep_t_hours
    ):
        rows.extend(_run_coded_point(ctx, pcm, encoder, i, npe, th))
    return rows


def run_training_size_study(config: ExperimentConfig) -> list[dict]:
    """RBER spread versus training-set size, several trials per size.

    Uses the first sweep point as the target condition.  Emits one row per
    trial plus min/median/max summary rows; the size is folded into the
    metric name to keep the flat schema.
    """
    ctx = SweepContext(config)
    if config.study_detector == "model_dtl":
        ctx.warm_up(("model_dtl",))
    n_pe, t_hours = config.sweep_n_pe[0], config.sweep_t_hours[0]
    target_op = OperatingPoint(n_pe, t_hours, ctx.target_family)
    chash = config_hash(config)
    test_seed = int(_seed_for(config, 4, 0).generate_state(1)[0])
    test = make_dataset(ctx.params, config.test_samples, target_op, test_seed)
    rows = []
    for size in config.study_sizes:
        rbers = []
        for trial in range(config.study_trials):
            seed_seq = _seed_for(config, 4, 1, size, trial)
            ds = make_dataset(
                ctx.params, size, target_op, int(seed_seq.generate_state(1)[0])
            )
            cfg = _train_config(config, _seed_for(config, 4, 2, size, trial))
            if config.study_detector == "target_rnna":
                init = init_xavier(
                    int(_seed_for(config, 4, 3, size, trial).generate_state(1)[0])
                )
                model, _ = train(ds, cfg, init)
            else:
                model, _ = train(ds, cfg, ctx.source_model, freeze=("gru1",))
            thresholds = ctx.derive_rnna_thresholds(model, ds.voltages)
            detected = threshold_detect(thresholds, test.voltages)
            rber = _bit_errors(detected, test.truth, ctx.gray)
            rbers.append(rber)
            rows.append(
                {
                    "cell": config.cell,
                    "family": config.family,
                    "n_pe": n_pe,
                    "t_hours": t_hours,
                    "detector": config.study_detector,
                    "metric": f"rber_n{size}",
                    "value": rber,
                    "seed": int(seed_seq.generate_state(1)[0]),
                    "config_hash": chash,
                }
            )
        for stat, value in (
            ("min", float(np.min(rbers))),
            ("median", float(np.median(rbers))),
            ("max", float(np.max(rbers))),
        ):
            rows.append(
                {
                    "cell": config.cell,
                    "family": config.family,
                    "n_pe": n_pe,
                    "t_hours": t_hours,
                    "detector": config.study_detector,
                    "metric": f"rber_{stat}_n{size}",
                    "value": value,
                    "seed": config.seed,
                    "config_hash": chash,
                }
            )
    return rows
