"""
Paired-seed experiments: method-vs-baseline comparisons and the text
weight (alpha) sweep, summarized as pandas tables
"""
import logging
from dataclasses import replace
from typing import Dict, Optional, Sequence

import pandas as pd

from src.config_loader import TrainConfig
from src.data.dataset import Dataset
from src.errors import InputError
from src.taxonomy.tree import Taxonomy
from src.trainer.trainer import train

logger = logging.getLogger(__name__)


def final_heldout(history) -> dict:
    """Held-out metrics of the last epoch, flattened for a table row"""
    report = history[-1].heldout
    if report is None:
        raise InputError("no fully labeled held-out samples to compare on")
    row = {"fpa": report["fpa"], "tice": report["tice"]}
    for level, acc in report["level_accuracy"].items():
        row[f"level_{level}_accuracy"] = acc
    row["fine_accuracy"] = report["level_accuracy"][str(len(report["level_accuracy"]))]
    return row


def paired_seed_comparison(d: Dataset, t: Taxonomy, configs: Dict[str, TrainConfig], seeds: Sequence[int],
                           reference: Optional[Dataset] = None) -> pd.DataFrame:
    """One training run per (seed, config); every config sees the same seeds"""
    if not configs or not seeds:
        raise InputError("comparison needs at least one config and one seed")
    rows = []
    for seed in seeds:
        for name, cfg in configs.items():
            run_cfg = replace(cfg, seed=int(seed)).validate()
            _, history = train(d, t, run_cfg, reference=reference)
            row = {"config": name, "seed": int(seed)}
            row.update(final_heldout(history))
            rows.append(row)
            logger.info("%s seed=%d fpa=%.4f fine=%.4f", name, seed, row["fpa"], row["fine_accuracy"])
    return pd.DataFrame(rows)


def paired_differences(frame: pd.DataFrame, baseline: str, metric: str = "fine_accuracy") -> pd.DataFrame:
    """Per config: mean metric and mean paired difference against the baseline"""
    table = frame.pivot(index="seed", columns="config", values=metric)
    if baseline not in table.columns:
        raise InputError(f"baseline '{baseline}' is not among the compared configs")
    summary = pd.DataFrame({
        "mean": table.mean(),
        "mean_diff_vs_baseline": table.sub(table[baseline], axis=0).mean(),
        "wins": table.gt(table[baseline], axis=0).sum(),
    })
    summary.index.name = "config"
    return summary


def alpha_sweep(d: Dataset, t: Taxonomy, base_cfg: TrainConfig, alphas: Sequence[float], seeds: Sequence[int],
                reference: Optional[Dataset] = None) -> pd.DataFrame:
    """Held-out metrics for each alpha, averaged over paired seeds"""
    configs = {f"alpha={a:g}": replace(base_cfg, alpha=float(a)) for a in alphas}
    frame = paired_seed_comparison(d, t, configs, seeds, reference=reference)
    frame["alpha"] = frame["config"].str.split("=").str[1].astype(float)
    return frame.groupby("alpha", as_index=False).mean(numeric_only=True).drop(columns=["seed"])
