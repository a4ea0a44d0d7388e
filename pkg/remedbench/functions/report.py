"""Report files for a benchmark run, and replay of stored episodes."""
import csv
import difflib
import io
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import ValidationError

from remedbench.config import BackendName, RunConfig
from remedbench.exceptions import ReplayError, ReportError
from remedbench.functions.bench import EpisodeResult, MetricsSummary, Scenario, aggregate, run_episode
from remedbench.functions.chaos import FailureType

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ABSENT = "NA"

RESULTS_FILE = "results.json"
SUMMARY_CSV = "summary.csv"
SUMMARY_MD = "summary.md"
PER_TYPE_CSV = "per_type.csv"

SUMMARY_COLUMNS = ["system", "difficulty", "policy", "backend", "n_episodes", "n_injected", "n_success",
                   "ra", "arl_s", "atc", "atc_all"]
PER_TYPE_COLUMNS = ["failure_type", "category", "n", "n_success", "ra"]

# wall-clock values; zeroed before comparing two runs
VOLATILE_KEYS = {"generated_at", "wall_latency_s", "attempt_latencies_s", "arl_s"}

# the parts of an episode a replay must reproduce
REPLAYED_FIELDS = ("injected_ok", "success", "attempts", "tokens", "final_playbooks", "transcripts",
                   "verify_outcomes", "messages")


def fmt_value(value) -> str:
    if value is None:
        return ABSENT
    if isinstance(value, float):
        return f"{value:.6f}".rstrip("0").rstrip(".") if value != int(value) else f"{value:.1f}"
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def results_document(config: Optional[RunConfig], summary: MetricsSummary,
                     results: List[EpisodeResult]) -> Dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": config.model_dump(mode="json") if config is not None else None,
        "summary": summary.model_dump(mode="json"),
        "episodes": [r.model_dump(mode="json") for r in results],
    }


def summary_rows(summary: MetricsSummary) -> List[List[str]]:
    return [[fmt_value(row.system_id), fmt_value(row.difficulty) if row.difficulty else "custom", fmt_value(row.policy),
             row.backend, fmt_value(row.n_episodes), fmt_value(row.n_injected), fmt_value(row.n_success),
             fmt_value(row.ra), fmt_value(row.arl_s), fmt_value(row.atc), fmt_value(row.atc_all)]
            for row in summary.per_difficulty]


def per_type_rows(summary: MetricsSummary) -> List[List[str]]:
    rows = []
    for failure_type, stats in summary.per_type.items():
        failure_type = FailureType(failure_type)
        rows.append([failure_type.value, failure_type.category.value, fmt_value(stats.n),
                     fmt_value(stats.n_success), fmt_value(stats.ra)])
    return rows


def _csv(header: List[str], rows: List[List[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def summary_markdown(summary: MetricsSummary) -> str:
    lines = ["| System | Difficulty | Policy | Backend | Injected | Remediated | RA | ARL (s) | ATC |",
             "|---|---|---|---|---|---|---|---|---|"]
    for row in summary_rows(summary):
        system, difficulty, policy_name, backend, _, injected, success, ra, arl, atc, _ = row
        lines.append(f"| {system} | {difficulty} | {policy_name} | {backend} | {injected} | {success} "
                     f"| {ra} | {arl} | {atc} |")
    lines.append("")
    lines.append(f"Overall: RA {fmt_value(summary.ra)}, ARL {fmt_value(summary.arl_s)} s, ATC {fmt_value(summary.atc)} "
                 f"over {summary.n_injected} injected of {summary.n_episodes} episodes.")
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str):
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ReportError(f"cannot write report: {e.strerror or e}", path)


def emit_report(summary: MetricsSummary, results: List[EpisodeResult], out_dir,
                config: Optional[RunConfig] = None) -> List[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportError(f"cannot create report directory: {e.strerror or e}", out)
    document = results_document(config, summary, results)
    files = {
        RESULTS_FILE: json.dumps(document, indent=2, sort_keys=True) + "\n",
        SUMMARY_CSV: _csv(SUMMARY_COLUMNS, summary_rows(summary)),
        SUMMARY_MD: summary_markdown(summary),
        PER_TYPE_CSV: _csv(PER_TYPE_COLUMNS, per_type_rows(summary)),
    }
    written = []
    for name, text in files.items():
        _write(out / name, text)
        written.append(out / name)
    logger.info(f"Wrote {len(written)} report files to {out}")
    return written


def load_results(path) -> Dict:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ReportError(f"cannot read results: {e.strerror or e}", path)
    except json.JSONDecodeError as e:
        raise ReportError(f"malformed results: {e}", path)
    version = document.get("schema_version") if isinstance(document, dict) else None
    if version != SCHEMA_VERSION:
        raise ReportError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})", path)
    return document


def episodes_of(document: Dict) -> List[EpisodeResult]:
    try:
        return [EpisodeResult.model_validate(e) for e in document.get("episodes", [])]
    except ValidationError as e:
        raise ReportError(f"malformed episode: {e.errors()[0]['msg']}")


def rerender(results_path, out_dir) -> List[Path]:
    """Recompute the summary of a stored run and write its report files again."""
    document = load_results(results_path)
    results = episodes_of(document)
    config = RunConfig.model_validate(document["config"]) if document.get("config") else None
    return emit_report(aggregate(results), results, out_dir, config)


def normalize_results(document):
    """Copy of a results document with wall-clock values zeroed."""
    if isinstance(document, dict):
        normalized = {}
        for key, value in document.items():
            if key in VOLATILE_KEYS:
                normalized[key] = [] if isinstance(value, list) else (None if value is None else 0)
            else:
                normalized[key] = normalize_results(value)
        return normalized
    if isinstance(document, list):
        return [normalize_results(v) for v in document]
    return document


def _replayed(episode: Dict) -> str:
    picked = {k: episode.get(k) for k in REPLAYED_FIELDS}
    return json.dumps(picked, indent=2, sort_keys=True)


def replay_episode(document: Dict, episode_id: str) -> Tuple[bool, str]:
    """Re-run one stored episode. Returns (identical, unified diff of stored vs replayed)."""
    stored = next((e for e in document.get("episodes", []) if e.get("scenario_id") == episode_id), None)
    if stored is None:
        raise ReplayError(f"no episode {episode_id} in results")
    if stored.get("backend") == BackendName.REMOTE.value:
        raise ReplayError("non-replayable backend: remote episodes depend on the model service")
    if not document.get("config"):
        raise ReplayError("results carry no run config")
    config = RunConfig.model_validate(document["config"])
    scenario = Scenario(id=stored["scenario_id"], specs=stored["specs"], difficulty=stored.get("difficulty"))
    replayed = run_episode(scenario, config, system_id=stored["system_id"]).model_dump(mode="json")
    before, after = _replayed(stored), _replayed(replayed)
    if before == after:
        return True, ""
    diff = difflib.unified_diff(before.splitlines(), after.splitlines(),
                                fromfile=f"{episode_id} (stored)", tofile=f"{episode_id} (replayed)", lineterm="")
    return False, "\n".join(diff)


SWEEP_CSV = "sweep.csv"
SWEEP_COLUMNS = ["t_max", "n_injected", "n_success", "ra", "arl_s", "atc"]


def emit_sweep(points, out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportError(f"cannot create report directory: {e.strerror or e}", out)
    rows = [[fmt_value(p.t_max), fmt_value(p.n_injected), fmt_value(p.n_success), fmt_value(p.ra), fmt_value(p.arl_s), fmt_value(p.atc)]
            for p in points]
    _write(out / SWEEP_CSV, _csv(SWEEP_COLUMNS, rows))
    return out / SWEEP_CSV
