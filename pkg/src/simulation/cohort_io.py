"""Cohort CSV (one row per jump) and JSON manifest."""

import logging
from collections import OrderedDict
from pathlib import Path
from typing import List, Optional, Tuple, Union

import pandas as pd

from ..config.settings import NUISANCE_CONFIG
from ..models.schema import InterventionSpec, Mark, Scenario, SubjectPath
from ..utils.errors import ConfigError
from ..utils.io import read_frame, read_json, write_frame, write_json
from .simulator import Cohort

logger = logging.getLogger(__name__)

COLUMNS = ["id", "l0", "a0", "time", "mark"]
# Row recorded for a subject with no jumps before tau
NO_EVENT = "none"


def cohort_frame(cohort: Cohort) -> pd.DataFrame:
    rows = []
    for path in cohort.paths:
        a0 = "" if path.a0 is None else path.a0
        if not path.jumps:
            rows.append((path.id, path.l0, a0, path.tau, NO_EVENT))
        for time, mark in path.jumps:
            rows.append((path.id, path.l0, a0, time, mark))
    return pd.DataFrame(rows, columns=COLUMNS)


def cohort_manifest(cohort: Cohort) -> dict:
    return {
        "n": cohort.n,
        "tau": cohort.tau,
        "J": cohort.J,
        "seed": cohort.seed,
        "scenario": cohort.scenario.dict() if cohort.scenario else None,
        "intervention": cohort.intervention.dict() if cohort.intervention else None,
    }


def export_cohort(cohort: Cohort, csv_path: Union[str, Path],
                  manifest_path: Optional[Union[str, Path]] = None) -> Tuple[Path, Path]:
    csv_path = Path(csv_path)
    manifest_path = Path(manifest_path) if manifest_path else csv_path.with_suffix(".json")
    return write_frame(cohort_frame(cohort), csv_path), write_json(cohort_manifest(cohort), manifest_path)


def _jumps_from_rows(subject: int, rows: List[Tuple[float, str]]) -> List[Tuple[float, str]]:
    """Time-ordered jumps of one subject; a tied jump moves back by the tie jitter so a terminal mark stays last."""
    jumps = [(float(time), Mark.parse(mark)) for time, mark in rows if mark != NO_EVENT]
    jumps.sort(key=lambda jump: (jump[0], Mark.is_terminal(jump[1]), jump[1]))
    for k in range(len(jumps) - 2, -1, -1):
        time, mark = jumps[k]
        following = jumps[k + 1][0]
        if time >= following:
            moved = following - NUISANCE_CONFIG["tie_jitter"]
            logger.warning(f"Tied event times for subject {subject} at {time}; '{mark}' moved to {moved}")
            jumps[k] = (moved, mark)
    return jumps


def import_cohort(csv_path: Union[str, Path], manifest_path: Optional[Union[str, Path]] = None,
                  tau: Optional[float] = None) -> Cohort:
    """Read a cohort CSV; tau comes from the argument or the manifest next to the CSV."""
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise ConfigError(f"cohort file not found: {csv_path}", module="simulator")
    manifest_path = Path(manifest_path) if manifest_path else csv_path.with_suffix(".json")
    manifest = read_json(manifest_path) if manifest_path.exists() else {}
    tau = tau if tau is not None else manifest.get("tau")
    if tau is None:
        raise ConfigError("tau is unknown: pass it explicitly or provide the cohort manifest", module="simulator")

    frame = read_frame(csv_path)
    missing = set(COLUMNS) - set(frame.columns)
    if missing:
        raise ConfigError(f"cohort CSV lacks columns {sorted(missing)}", module="simulator")

    subjects: "OrderedDict[int, dict]" = OrderedDict()
    for row in frame.itertuples(index=False):
        entry = subjects.setdefault(int(row.id), {"l0": float(row.l0),
                                                  "a0": None if pd.isna(row.a0) else int(row.a0),
                                                  "rows": []})
        entry["rows"].append((float(row.time), str(row.mark)))

    try:
        paths = [SubjectPath(id=sid, l0=entry["l0"], a0=entry["a0"],
                             jumps=_jumps_from_rows(sid, entry["rows"]), tau=float(tau))
                 for sid, entry in subjects.items()]
    except ValueError as e:
        raise ConfigError(f"invalid path in {csv_path}: {e}", module="simulator") from e

    J = int(manifest.get("J") or max([1] + [Mark.outcome_index(m) for p in paths for _, m in p.jumps
                                             if Mark.is_outcome(m)]))
    scenario = Scenario(**manifest["scenario"]) if manifest.get("scenario") else None
    intervention = InterventionSpec(**manifest["intervention"]) if manifest.get("intervention") else None
    logger.info(f"Imported {len(paths)} subjects from {csv_path}")
    return Cohort(paths=paths, tau=float(tau), J=J, seed=manifest.get("seed"), scenario=scenario,
                  intervention=intervention)
