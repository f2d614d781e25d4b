"""
Parameter sweeps over simulation configurations
"""
import logging
from collections.abc import Sequence
from dataclasses import dataclass

import pandas as pd
from tqdm import tqdm

from ..exceptions import AoISchedError
from .engine import SimConfig, run

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["policy", "weighted_avg_aoi", "stderr", "slots", "seed", "replications", "error"]


@dataclass
class SweepPoint:
    """One configuration of a sweep, tagged with its axis value"""
    config: SimConfig
    axis_value: float | int


def sweep(
    points: Sequence[SweepPoint],
    axis: str = "snr_db",
    progress: bool = True,
    traces: dict[int, list[str]] | None = None,
) -> pd.DataFrame:
    """
    Run every point and collect one row per point

    A failing point records its error message in the 'error' column and the
    sweep moves on.

    Args:
        points: Configurations to run, in output order
        axis: Column name of the swept quantity (e.g. snr_db or n_clients)
        progress: Show a tqdm progress bar
        traces: Filled with point index -> trace lines for points that record a trace

    Returns:
        DataFrame with columns policy, <axis>, weighted_avg_aoi, stderr, slots, seed, replications, error
    """
    columns = [RESULT_COLUMNS[0], axis, *RESULT_COLUMNS[1:]]
    rows = []
    for index, point in enumerate(tqdm(points, desc="sweep", unit="point", disable=not progress)):
        config = point.config
        row = {
            "policy": config.policy.display,
            axis: point.axis_value,
            "slots": config.averaged_slots,
            "seed": config.seed,
            "replications": config.replications,
            "error": "",
        }
        try:
            result = run(config)
            row["weighted_avg_aoi"] = result.weighted_avg_aoi
            row["stderr"] = result.stderr
            if traces is not None and result.trace is not None:
                traces[index] = result.trace
        except AoISchedError as e:
            logger.error(f"[sweep] {config.policy.display} at {axis}={point.axis_value} failed: {e}")
            row["weighted_avg_aoi"] = float("nan")
            row["stderr"] = float("nan")
            row["error"] = f"{type(e).__name__}: {e}"
        rows.append(row)

    logger.info(f"[sweep] Finished {len(rows)} points")
    return pd.DataFrame(rows, columns=columns)
