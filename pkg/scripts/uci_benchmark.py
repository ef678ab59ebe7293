# scripts/uci_benchmark.py
"""
Protocolo UCI: entrena un modelo por split (90/10) y resume la
log-verosimilitud de test como media ± error estándar.

    python scripts/uci_benchmark.py --dataset data/boston.csv --splits 20 --out-dir runs/boston
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from app import cli  # noqa: E402
from app.core.config import LOG_FORMAT, settings  # noqa: E402
from app.core.errors import DIWPError  # noqa: E402

logging.basicConfig(level=settings.LOG_LEVEL, format=LOG_FORMAT, handlers=[logging.StreamHandler()])
logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Benchmark UCI por splits")
    parser.add_argument("--dataset", required=True, help="CSV numérico, target en la última columna por defecto")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--splits", type=int, default=20)
    parser.add_argument("--layers", type=int, nargs="+", default=[1, 2, 3, 4, 5],
                        help="Profundidades a comparar")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("extra", nargs=argparse.REMAINDER, help="Flags adicionales para `train` tras --")
    return parser


def run_benchmark(dataset: str, out_dir: Path, splits: int, depths, seed: int, extra) -> pd.DataFrame:
    rows = []
    for layers in depths:
        for split in range(splits):
            run_dir = out_dir / f"L{layers}" / f"split{split}"
            argv = ["train", "--dataset", dataset, "--out-dir", str(run_dir), "--layers", str(layers),
                    "--split-index", str(split), "--split-count", str(splits), "--seed", str(seed), *extra]
            logger.info(f"🔄 L={layers}, split {split + 1}/{splits}")
            try:
                summary = cli.run(argv)
            except DIWPError as e:
                logger.error(f"❌ L={layers}, split {split}: {e.message}")
                continue
            rows.append({"layers": layers, "split": split, "test_loglik": summary.test_loglik,
                         "test_rmse": summary.test_rmse, "train_elbo": summary.train_elbo})
    return pd.DataFrame(rows)


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    grouped = results.groupby("layers")
    table = grouped.agg(
        splits=("split", "count"),
        test_loglik=("test_loglik", "mean"),
        test_loglik_sem=("test_loglik", lambda s: s.std(ddof=1) / np.sqrt(len(s)) if len(s) > 1 else np.nan),
        test_rmse=("test_rmse", "mean"),
        train_elbo=("train_elbo", "mean"),
    )
    return table.reset_index()


def main() -> int:
    args = build_parser().parse_args()
    extra = [a for a in args.extra if a != "--"]
    out_dir = Path(args.out_dir)
    results = run_benchmark(args.dataset, out_dir, args.splits, args.layers, args.seed, extra)
    if results.empty:
        logger.error("❌ Ningún split terminó")
        return 3
    out_dir.mkdir(parents=True, exist_ok=True)
    results.to_csv(out_dir / "benchmark_runs.csv", index=False)
    table = summarize(results)
    table.to_csv(out_dir / "benchmark_summary.csv", index=False)
    for row in table.itertuples():
        logger.info(f"✅ L={row.layers}: LL={row.test_loglik:.3f} ± {row.test_loglik_sem:.3f} ({row.splits} splits)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
