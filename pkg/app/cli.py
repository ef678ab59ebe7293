# app/cli.py
"""
CLI: train, evaluate, sample-prior, sample-posterior, eigen-hist,
complexity-probe y serve.

La configuración se lee de un JSON plano (--config) y los flags la
sobrescriben. Códigos de salida: 0 éxito, 2 configuración, 3 fallo
numérico, 4 E/S.
"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple
import argparse
import json
import logging
import sys

import numpy as np
from pydantic import ValidationError

from app.core.autodiff import Tape, derive_seed
from app.core.config import LOG_FORMAT, settings
from app.core.errors import EXIT_IO, EXIT_OK, CheckpointError, ConfigError, DIWPError
from app.models.artifacts import StandardizationRecord
from app.models.responses import EvaluationSummary
from app.models.specs import RunConfig
from app.services.diwp_model import DIWPModel
from app.services.inference import elbo_batch, predict
from app.services.prior_sampling import (
    PriorRollout, eigen_histogram, grid_inputs, posterior_panels, prior_panels,
)
from app.services.profiling import complexity_probe
from app.services.training import TrainingState, default_batch_size, default_train_samples, train
from app.utils.artifact_utils import (
    MetricsWriter, ensure_dir, make_header, truncate_metrics, write_columns, write_json, write_matrix,
)
from app.utils.checkpoint_utils import load_checkpoint, save_checkpoint
from app.utils.data_utils import (
    Dataset, destandardize_loglik, destandardize_predictions, load_csv, load_idx_dataset, make_manifest,
    make_split, read_manifest, split_from_manifest, standardize_features, write_manifest,
)

logger = logging.getLogger(__name__)

# Flujo de aleatoriedad de la evaluación, separado de los pasos de entrenamiento
EVAL_STREAM = 2 ** 31 - 1

CHECKPOINT_FILE = "checkpoint.json"
METRICS_FILE = "metrics.jsonl"
SPLIT_FILE = "split.json"
SUMMARY_FILE = "summary.json"
EVALUATION_FILE = "evaluation.json"


def configure_logging() -> None:
    logging.basicConfig(level=settings.LOG_LEVEL, format=LOG_FORMAT, handlers=[logging.StreamHandler()])
    logging.getLogger("httpx").setLevel(logging.WARNING)
    logging.getLogger("uvicorn.access").setLevel(logging.WARNING)


# ---------------------------------------------------------------------------
# parser y configuración
# ---------------------------------------------------------------------------

def _shared_flags() -> argparse.ArgumentParser:
    """Flags comunes; solo los presentes en la línea de comandos sobrescriben el JSON"""
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="Fichero JSON plano con claves de RunConfig")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")

    data = p.add_argument_group("datos")
    data.add_argument("--dataset", help="CSV, o 'imagenes.idx,etiquetas.idx' para IDX")
    data.add_argument("--target-col", dest="target_col", type=int)
    data.add_argument("--delimiter")
    data.add_argument("--header", action="store_true")
    data.add_argument("--task")
    data.add_argument("--split-index", dest="split_index", type=int)
    data.add_argument("--split-count", dest="split_count", type=int)
    data.add_argument("--test-fraction", dest="test_fraction", type=float)
    data.add_argument("--split-manifest", dest="split_manifest")

    model = p.add_argument_group("modelo")
    model.add_argument("--layers", type=int)
    model.add_argument("--kernel")
    model.add_argument("--bandwidth", type=float)
    model.add_argument("--relu-scale", dest="relu_scale")
    model.add_argument("--inducing", type=int)
    model.add_argument("--delta-init", dest="delta_init", type=float)
    model.add_argument("--nngp-limit", dest="nngp_limit", action="store_true")
    model.add_argument("--propagation")
    model.add_argument("--no-input-transform", dest="learn_input_transform", action="store_false")

    training = p.add_argument_group("entrenamiento")
    training.add_argument("--steps", type=int)
    training.add_argument("--lr-high", dest="lr_high", type=float)
    training.add_argument("--lr-low", dest="lr_low", type=float)
    training.add_argument("--batch", type=int)
    training.add_argument("--samples-train", dest="samples_train", type=int)
    training.add_argument("--samples-eval", dest="samples_eval", type=int)
    training.add_argument("--checkpoint")
    training.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    training.add_argument("--resume", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    shared = _shared_flags()
    parser = argparse.ArgumentParser(prog="diwp", description="Procesos de Wishart inverso profundos")
    sub = parser.add_subparsers(dest="command", required=True)

    quiet = dict(parents=[shared], argument_default=argparse.SUPPRESS)
    sub.add_parser("train", help="Entrenar y evaluar sobre un split", **quiet)
    sub.add_parser("evaluate", help="Evaluar un checkpoint", **quiet)
    sub.add_parser("serve", help="API de predicción sobre un checkpoint", **quiet)

    prior = sub.add_parser("sample-prior", help="Muestras del prior sobre una rejilla 1D", **quiet)
    prior.add_argument("--prior-family", dest="prior_family")
    prior.add_argument("--prior-layers", dest="prior_layers", type=int)
    prior.add_argument("--prior-delta", dest="prior_delta", type=float)
    prior.add_argument("--prior-width", dest="prior_width", type=int)
    prior.add_argument("--grid-points", dest="grid_points", type=int)
    prior.add_argument("--grid-min", dest="grid_min", type=float)
    prior.add_argument("--grid-max", dest="grid_max", type=float)
    prior.add_argument("--panels", type=int)
    prior.add_argument("--functions-per-panel", dest="functions_per_panel", type=int)

    posterior = sub.add_parser("sample-posterior", help="Muestras del posterior de un checkpoint 1D", **quiet)
    posterior.add_argument("--grid-points", dest="grid_points", type=int)
    posterior.add_argument("--grid-min", dest="grid_min", type=float)
    posterior.add_argument("--grid-max", dest="grid_max", type=float)
    posterior.add_argument("--panels", type=int)
    posterior.add_argument("--functions-per-panel", dest="functions_per_panel", type=int)

    eig = sub.add_parser("eigen-hist", help="Histogramas de autovalores", **quiet)
    eig.add_argument("--distribution", dest="eig_distribution")
    eig.add_argument("--size", dest="eig_size", type=int)
    eig.add_argument("--draws", dest="eig_draws", type=int)
    eig.add_argument("--n", dest="eig_n", type=int)
    eig.add_argument("--nu", dest="eig_nu", type=float)
    eig.add_argument("--alpha", dest="eig_alpha", type=float)

    probe = sub.add_parser("complexity-probe", help="Tiempos de elbo_batch frente a P_t y P_i", **quiet)
    probe.add_argument("--probe-inducing", dest="probe_inducing", type=int, nargs="+")
    probe.add_argument("--probe-points", dest="probe_points", type=int, nargs="+")
    probe.add_argument("--probe-repeats", dest="probe_repeats", type=int)
    return parser


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        key = ".".join(str(part) for part in err["loc"]) or "config"
        lines.append(f"{key}: {err['msg']}")
    return "; ".join(lines)


def load_config(args: argparse.Namespace) -> RunConfig:
    """JSON (si hay) + flags explícitos -> RunConfig validado"""
    values: Dict[str, Any] = {}
    flags = vars(args).copy()
    config_path = flags.pop("config", None)
    if config_path:
        try:
            values = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"No existe el fichero de configuración: {config_path}") from exc
        except ValueError as exc:
            raise ConfigError(f"Configuración JSON inválida en {config_path}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"{config_path}: se esperaba un objeto JSON plano")
    values.update(flags)
    values.setdefault("seed", settings.DEFAULT_SEED)
    try:
        return RunConfig.model_validate(values)
    except ValidationError as exc:
        raise ConfigError(f"Configuración inválida: {_format_validation(exc)}") from exc


# ---------------------------------------------------------------------------
# datos y evaluación
# ---------------------------------------------------------------------------

def load_dataset(config: RunConfig) -> Dataset:
    if not config.dataset:
        raise ConfigError("Falta --dataset")
    if "," in config.dataset:
        images, labels = (part.strip() for part in config.dataset.split(",", 1))
        return load_idx_dataset(images, labels)
    return load_csv(config.dataset, config.target_col, config.delimiter, config.header, config.task)


def load_split(config: RunConfig, dataset: Dataset, manifest_path: Optional[str] = None) -> Tuple[Dataset, Dataset]:
    path = manifest_path or config.split_manifest
    if path:
        return split_from_manifest(dataset, read_manifest(path))
    return make_split(dataset, config.split_spec())


def standardization_record(train_set: Dataset) -> StandardizationRecord:
    return StandardizationRecord(
        feature_mean=train_set.feature_mean.tolist(),
        feature_std=train_set.feature_std.tolist(),
        target_mean=train_set.target_mean,
        target_std=train_set.target_std,
    )


def evaluate_model(model: DIWPModel, train_set: Dataset, test_set: Dataset, config: RunConfig) -> EvaluationSummary:
    """Log-verosimilitud predictiva de test (escala original), RMSE/accuracy y ELBO por punto en train"""
    seed = derive_seed(config.seed, EVAL_STREAM)
    summary = predict(model, test_set.features, test_set.targets, n_samples=config.samples_eval, seed=seed)
    ll_std = summary.mean_loglik
    regression = test_set.task == "regression"
    ll = destandardize_loglik(ll_std, test_set.target_std) if regression else ll_std

    rmse = None
    if regression:
        mean, _ = destandardize_predictions(np.array(summary.mean), None, test_set.target_mean, test_set.target_std)
        y_true = test_set.targets * (test_set.target_std or 1.0) + (test_set.target_mean or 0.0)
        rmse = float(np.sqrt(np.mean((mean.reshape(-1) - y_true.reshape(-1)) ** 2)))

    n_train = train_set.size
    tape = Tape(seed)
    n_samples = config.samples_train or default_train_samples(n_train)
    _, report = elbo_batch(model, train_set.features, train_set.targets, n_train, n_samples, tape,
                           bound=model.bind_constants(tape))

    result = EvaluationSummary(
        task=test_set.task,
        test_loglik=ll,
        test_loglik_standardized=ll_std,
        test_rmse=rmse,
        test_accuracy=summary.accuracy,
        train_elbo=report.total / n_train,
        sample_count=config.samples_eval,
        test_points=test_set.size,
        train_points=n_train,
    )
    logger.info(f"✅ Test LL={result.test_loglik:.4f}, ELBO/N={result.train_elbo:.4f}")
    return result


# ---------------------------------------------------------------------------
# comandos
# ---------------------------------------------------------------------------

def cmd_train(config: RunConfig) -> EvaluationSummary:
    out_dir = ensure_dir(config.out_dir)
    header = make_header(config)
    checkpoint_path = Path(config.checkpoint or out_dir / CHECKPOINT_FILE)
    metrics_path = out_dir / METRICS_FILE

    dataset = load_dataset(config)
    manifest = read_manifest(config.split_manifest) if config.split_manifest else None
    if manifest is None:
        manifest = make_manifest(dataset, config.split_spec(), header)
    train_set, test_set = split_from_manifest(dataset, manifest)
    write_manifest(str(out_dir / SPLIT_FILE), manifest.model_copy(update={"header": header}))

    spec = config.model_spec(dataset.input_dim, dataset.output_dim)
    state: Optional[TrainingState] = None
    if config.resume and checkpoint_path.exists():
        loaded = load_checkpoint(checkpoint_path)
        if loaded.model.spec != spec:
            raise CheckpointError(f"El checkpoint {checkpoint_path} no corresponde a la configuración actual")
        model, state = loaded.model, loaded.state
        truncate_metrics(metrics_path, state.step)
        logger.info(f"🔄 Reanudando desde el paso {state.step}")
    else:
        model = DIWPModel.initialize(spec, train_set.features, train_set.targets, seed=config.seed)

    norm = standardization_record(train_set)
    classes = dataset.classes if dataset.task == "classification" else None

    def on_checkpoint(m: DIWPModel, s: TrainingState) -> None:
        save_checkpoint(checkpoint_path, m, s, header, dataset.task, norm, classes)

    with MetricsWriter(metrics_path, header, append=state is not None) as writer:
        result = train(
            model, train_set.features, train_set.targets, config.schedule(),
            batch_size=config.batch or default_batch_size(train_set.size),
            seed=config.seed, n_samples=config.samples_train, state=state,
            on_step=writer.write, on_checkpoint=on_checkpoint, checkpoint_every=config.checkpoint_every,
        )
    save_checkpoint(checkpoint_path, result.model, result.state, header, dataset.task, norm, classes)

    summary = evaluate_model(result.model, train_set, test_set, config)
    write_json(out_dir / SUMMARY_FILE, header, summary)
    return summary


def cmd_evaluate(config: RunConfig) -> EvaluationSummary:
    out_dir = ensure_dir(config.out_dir)
    checkpoint_path = Path(config.checkpoint or out_dir / CHECKPOINT_FILE)
    loaded = load_checkpoint(checkpoint_path)
    dataset = load_dataset(config)
    if loaded.model.spec.input_dim != dataset.input_dim:
        raise CheckpointError(f"El checkpoint espera {loaded.model.spec.input_dim} características, "
                              f"el dataset tiene {dataset.input_dim}")

    default_manifest = out_dir / SPLIT_FILE
    manifest_path = config.split_manifest or (str(default_manifest) if default_manifest.exists() else None)
    train_set, test_set = load_split(config, dataset, manifest_path)

    summary = evaluate_model(loaded.model, train_set, test_set, config)
    write_json(out_dir / EVALUATION_FILE, make_header(config), summary)
    return summary


def _write_rollouts(out_dir: Path, header, x: np.ndarray, rollouts: List[PriorRollout]) -> List[Path]:
    """G_ℓ, K(G_ℓ) y funciones de cada panel, con la cabecera de la ejecución"""
    written: List[Path] = []
    for rollout in rollouts:
        for layer, (g, k) in enumerate(zip(rollout.grams, rollout.kernels), start=1):
            written.append(write_matrix(out_dir / f"{rollout.label}_G{layer}.txt", header, g, f"G_{layer}"))
            written.append(write_matrix(out_dir / f"{rollout.label}_K{layer}.txt", header, k, f"K(G_{layer})"))
        columns = {"x": x[:, 0]}
        columns.update({f"f{j}": rollout.functions[:, j] for j in range(rollout.functions.shape[1])})
        written.append(write_columns(out_dir / f"{rollout.label}_functions.csv", header, columns))
    return written


def cmd_sample_prior(config: RunConfig) -> List[Path]:
    out_dir = ensure_dir(Path(config.out_dir) / "prior")
    x = grid_inputs(config.grid_points, config.grid_min, config.grid_max)
    rollouts = prior_panels(x, config.kernel_spec(), config.prior_layers, config.panels, config.functions_per_panel,
                            family=config.prior_family, delta=config.prior_delta, width=config.prior_width,
                            seed=config.seed)
    written = _write_rollouts(out_dir, make_header(config), x, rollouts)
    logger.info(f"✅ {len(written)} ficheros de prior en {out_dir}")
    return written


def cmd_sample_posterior(config: RunConfig) -> List[Path]:
    """Paneles del posterior aproximado de un checkpoint con una característica, en la escala original"""
    checkpoint_path = Path(config.checkpoint or Path(config.out_dir) / CHECKPOINT_FILE)
    loaded = load_checkpoint(checkpoint_path)
    if loaded.model.spec.input_dim != 1:
        raise ConfigError(f"sample-posterior requiere un modelo 1D, el checkpoint tiene "
                          f"{loaded.model.spec.input_dim} características")
    out_dir = ensure_dir(Path(config.out_dir) / "posterior")
    x = grid_inputs(config.grid_points, config.grid_min, config.grid_max)
    norm = loaded.standardization
    x_model = x if norm is None else standardize_features(x, np.array(norm.feature_mean), np.array(norm.feature_std))
    rollouts = posterior_panels(loaded.model, x_model, config.panels, config.functions_per_panel, seed=config.seed)
    if loaded.task == "regression" and norm is not None and norm.target_std is not None:
        for rollout in rollouts:
            rollout.functions = rollout.functions * norm.target_std + norm.target_mean
    written = _write_rollouts(out_dir, make_header(config), x, rollouts)
    logger.info(f"✅ {len(written)} ficheros de posterior en {out_dir}")
    return written


def cmd_eigen_hist(config: RunConfig) -> List[Path]:
    out_dir = ensure_dir(Path(config.out_dir) / "eigen")
    header = make_header(config)
    result = eigen_histogram(config.eig_distribution, config.eig_size, config.eig_draws, n=config.eig_n,
                             nu=config.eig_nu, alpha=config.eig_alpha, seed=config.seed)
    draws = np.repeat(np.arange(result.eigenvalues.shape[0]), result.size)
    counts, edges = result.histogram()
    name = result.distribution
    return [
        write_columns(out_dir / f"{name}_eigenvalues.csv", header,
                      {"draw": draws, "eigenvalue": result.eigenvalues.ravel()}),
        write_columns(out_dir / f"{name}_histogram.csv", header,
                      {"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts}),
    ]


def cmd_complexity_probe(config: RunConfig) -> Path:
    out_dir = ensure_dir(config.out_dir)
    header = make_header(config)
    report = complexity_probe(config.probe_inducing, config.probe_points, kernel=config.kernel_spec(),
                              layer_count=config.layers, repeats=config.probe_repeats, seed=config.seed)
    write_columns(out_dir / "complexity_timings.csv", header, {
        "inducing": [r.inducing for r in report.rows],
        "points": [r.points for r in report.rows],
        "seconds": [r.seconds for r in report.rows],
        "peak_bytes": [r.peak_bytes for r in report.rows],
    })
    return write_json(out_dir / "complexity.json", header, report)


def cmd_serve(config: RunConfig) -> None:
    import uvicorn

    checkpoint_path = config.checkpoint or str(Path(config.out_dir) / CHECKPOINT_FILE)
    if not Path(checkpoint_path).is_file():
        raise CheckpointError(f"No existe el checkpoint: {checkpoint_path}")
    settings.CHECKPOINT_PATH = checkpoint_path
    logger.info(f"🚀 Sirviendo {checkpoint_path} en {settings.HOST}:{settings.PORT}")
    uvicorn.run("app.main:app", host=settings.HOST, port=settings.PORT, workers=1, log_level="info")


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sample-prior": cmd_sample_prior,
    "sample-posterior": cmd_sample_posterior,
    "eigen-hist": cmd_eigen_hist,
    "complexity-probe": cmd_complexity_probe,
    "serve": cmd_serve,
}


def run(argv: Optional[List[str]] = None) -> Any:
    """Ejecuta un subcomando y devuelve su resultado; los errores se propagan"""
    args = build_parser().parse_args(argv)
    config = load_config(args)
    return COMMANDS[config.command](config)


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    try:
        result = run(argv)
    except DIWPError as e:
        logger.error(f"❌ {e.error_code}: {e.message}" + (f" ({e.detail})" if e.detail else ""))
        return e.exit_code
    except OSError as e:
        logger.error(f"❌ Error de E/S: {e}")
        return EXIT_IO
    if isinstance(result, EvaluationSummary):
        print(result.model_dump_json(indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
