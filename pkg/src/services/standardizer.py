import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError
from sklearn.preprocessing import StandardScaler

from src.core.errors import IngestError, ScalerError, SplitError
from src.core.schema import canonical_label, default_mapping, round_half_up
from src.models.flow import (
    BENIGN,
    FLOW_START_COLUMN,
    NUMERIC_FEATURES,
    OTHER,
    UNIFIED_COLUMNS,
    FlowRecord,
    L7PortMap,
    MappingConfig,
    ScalerStats,
    SplitSpec,
    UnifiedSchema,
    AttackTaxonomy,
)
from src.utils.logger import logger

MAX_SKIP_RATE = 0.01

_INT_FIELDS = (
    "L4_SRC_PORT", "L4_DST_PORT", "PROTOCOL", "L7_PROTO", "IN_BYTES", "OUT_BYTES",
    "IN_PKTS", "OUT_PKTS", "TCP_FLAGS", "FLOW_DURATION_MILLISECONDS", FLOW_START_COLUMN,
)
_STR_COLUMNS = {"IPV4_SRC_ADDR": str, "IPV4_DST_ADDR": str, "flow_id": str,
                "dataset_source": str, "Label": str}
_ATTACK_TRUE = {"1", "true", "attack", "malicious", "yes"}
_ATTACK_FALSE = {"0", "false", "benign", "normal", "no"}


class StandardizeResult(BaseModel):
    records: List[FlowRecord]
    rows_in: int
    rows_skipped: int
    skip_reasons: Dict[str, int] = Field(default_factory=dict)

    @property
    def skip_rate(self) -> float:
        return self.rows_skipped / self.rows_in if self.rows_in else 0.0


def engineer_l7(port_src: int, port_dst: int, protocol: int, l7_map: L7PortMap) -> int:
    """Application protocol id from well-known ports; destination port wins."""
    l7 = l7_map.lookup(port_dst, protocol)
    if l7:
        return l7
    return l7_map.lookup(port_src, protocol)


def _as_int(value, scale: Optional[float] = None, truncate: bool = False) -> int:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        raise ValueError("missing numeric value")
    number = float(value)
    if truncate:
        return math.floor(number)
    if scale is not None:
        return round_half_up(number * scale)
    if not number.is_integer():
        raise ValueError(f"non-integer value {value!r}")
    return int(number)


def _as_attack(value) -> int:
    text = str(value).strip().casefold()
    if text.endswith(".0"):
        text = text[:-2]
    if text in _ATTACK_TRUE:
        return 1
    if text in _ATTACK_FALSE:
        return 0
    raise ValueError(f"unparseable binary label {value!r}")


def _resolve_columns(columns: Sequence[str], schema: UnifiedSchema) -> Dict[str, str]:
    """Unified field -> raw column present in the frame."""
    known = set(UNIFIED_COLUMNS) | {FLOW_START_COLUMN}
    resolved: Dict[str, str] = {}
    for col in columns:
        unified = schema.column_map.get(col)
        if unified is None and col in known:
            unified = col
        if unified is not None:
            resolved.setdefault(unified, col)
    return resolved


def _check_required(resolved: Dict[str, str], schema: UnifiedSchema) -> None:
    derivable = {"L7_PROTO", "flow_id", "dataset_source", "TCP_FLAGS"}
    for field in schema.required:
        if field in resolved or field in derivable:
            continue
        if field == "Label" and "Attack" in resolved:
            continue
        if field == "Attack" and "Label" in resolved:
            continue
        raw_names = [raw for raw, unified in schema.column_map.items() if unified == field]
        expected = raw_names[0] if raw_names else field
        raise IngestError(f"Missing required column {expected!r} (unified field {field})")
    if "Label" not in resolved and "Attack" not in resolved:
        raise IngestError("Missing required column 'Label' (no label or attack column)")


def _row_to_record(raw: dict, resolved: Dict[str, str], mapping: MappingConfig,
                   dataset_source: str, index: int) -> FlowRecord:
    schema = mapping.schema_
    values: Dict[str, object] = {}
    for field in ("IPV4_SRC_ADDR", "IPV4_DST_ADDR"):
        values[field] = str(raw[resolved[field]]).strip()
    for field in _INT_FIELDS:
        if field in resolved:
            cell = raw[resolved[field]]
            if field == FLOW_START_COLUMN and (cell is None or (isinstance(cell, float) and math.isnan(cell))):
                continue
            values[field] = _as_int(cell, schema.unit_scale.get(field), field in schema.truncate)
    values.setdefault("TCP_FLAGS", 0)
    if "L7_PROTO" not in values:
        values["L7_PROTO"] = engineer_l7(values["L4_SRC_PORT"], values["L4_DST_PORT"],
                                         values["PROTOCOL"], mapping.l7_ports)

    category = raw.get(resolved["Label"]) if "Label" in resolved else None
    binary = _as_attack(raw[resolved["Attack"]]) if "Attack" in resolved else None
    if category is not None and not (isinstance(category, float) and math.isnan(category)):
        label = canonical_label(str(category), mapping.taxonomy)
    else:
        if binary is None:
            raise ValueError("missing label")
        label = BENIGN if binary == 0 else OTHER
    if binary is None:
        binary = 0 if label == BENIGN else 1
    elif binary == 0:
        label = BENIGN
    elif label == BENIGN:
        label = OTHER
    values["Attack"] = binary
    values["Label"] = label

    flow_id = raw.get(resolved["flow_id"]) if "flow_id" in resolved else None
    if flow_id is None or (isinstance(flow_id, float) and math.isnan(flow_id)):
        flow_id = f"{dataset_source}-{index}"
    values["flow_id"] = str(flow_id)
    values["dataset_source"] = dataset_source
    return FlowRecord.model_validate(values)


def standardize_rows(rows: Union[pd.DataFrame, Iterable[dict]], mapping: MappingConfig,
                     dataset_source: str, max_skip_rate: float = MAX_SKIP_RATE) -> StandardizeResult:
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    frame = frame.rename(columns=lambda c: str(c).strip())
    resolved = _resolve_columns(list(frame.columns), mapping.schema_)
    _check_required(resolved, mapping.schema_)

    records: List[FlowRecord] = []
    reasons: Counter = Counter()
    seen_ids = set()
    repeats: Counter = Counter()
    raw_rows = frame.astype(object).to_dict("records")
    for index, raw in enumerate(raw_rows):
        try:
            record = _row_to_record(raw, resolved, mapping, dataset_source, index)
        except (ValidationError, ValueError, TypeError, KeyError) as e:
            reasons[type(e).__name__] += 1
            logger.debug(f"Skipping row {index} of {dataset_source}: {e}")
            continue
        # CICFlowMeter "Flow ID" is a 5-tuple and repeats; later occurrences get a #n suffix
        base_id = record.flow_id
        while record.flow_id in seen_ids:
            repeats[base_id] += 1
            record = record.model_copy(update={"flow_id": f"{base_id}#{repeats[base_id]}"})
        seen_ids.add(record.flow_id)
        records.append(record)
    if repeats:
        logger.info(f"{dataset_source}: {sum(repeats.values())} repeated flow ids made unique")

    result = StandardizeResult(records=records, rows_in=len(raw_rows),
                               rows_skipped=len(raw_rows) - len(records),
                               skip_reasons=dict(reasons))
    if result.rows_skipped:
        logger.warning(f"{dataset_source}: skipped {result.rows_skipped}/{result.rows_in} rows {dict(reasons)}")
    if result.skip_rate > max_skip_rate:
        raise IngestError(
            f"{dataset_source}: skip rate {result.skip_rate:.2%} exceeds {max_skip_rate:.0%}"
        )
    logger.info(f"Standardized {len(records)} flows from {dataset_source}")
    return result


def standardize_dataset(rows: Union[pd.DataFrame, Iterable[dict]], schema: UnifiedSchema,
                        taxonomy: AttackTaxonomy, dataset_source: str,
                        l7_map: Optional[L7PortMap] = None,
                        mapping: Optional[MappingConfig] = None) -> List[FlowRecord]:
    base = mapping or default_mapping()
    cfg = base.model_copy(update={
        "schema_": schema,
        "taxonomy": taxonomy,
        "l7_ports": l7_map if l7_map is not None else base.l7_ports,
    })
    return standardize_rows(rows, cfg, dataset_source).records


def read_raw_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, skipinitialspace=True, low_memory=False)


def frame_to_records(frame: pd.DataFrame) -> List[FlowRecord]:
    records = []
    for raw in frame.astype(object).to_dict("records"):
        start = raw.get(FLOW_START_COLUMN)
        if start is None or (isinstance(start, float) and math.isnan(start)):
            raw.pop(FLOW_START_COLUMN, None)
        records.append(FlowRecord.model_validate(raw))
    return records


def records_to_frame(records: Sequence[FlowRecord]) -> pd.DataFrame:
    columns = list(UNIFIED_COLUMNS)
    with_start = any(r.flow_start_ms is not None for r in records)
    if with_start:
        columns.append(FLOW_START_COLUMN)
    frame = pd.DataFrame([r.to_row() for r in records], columns=columns)
    if with_start:
        frame[FLOW_START_COLUMN] = frame[FLOW_START_COLUMN].astype("Int64")
    return frame


def read_flows(path: Union[str, Path]) -> List[FlowRecord]:
    frame = pd.read_csv(path, dtype=_STR_COLUMNS)
    return frame_to_records(frame)


def write_flows(records: Sequence[FlowRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records_to_frame(records).to_csv(path, index=False)
    return path


def feature_matrix(records: Sequence[FlowRecord], names: Sequence[str]) -> np.ndarray:
    bad = [n for n in names if n not in NUMERIC_FEATURES]
    if bad:
        raise ScalerError(f"Features are not numeric unified columns: {bad}")
    data = [[r.value(n) for n in names] for r in records]
    return np.asarray(data, dtype=np.float64).reshape(len(records), len(names))


def fit_scaler(train: Sequence[FlowRecord], features: Sequence[str]) -> ScalerStats:
    if not train:
        raise ScalerError("Cannot fit scaler on an empty training set")
    X = feature_matrix(train, features)
    # population stdev; zero-variance columns get scale 1
    scaler = StandardScaler().fit(X)
    return ScalerStats(
        feature_names=list(features),
        mean=[float(m) for m in scaler.mean_],
        stdev=[float(s) for s in scaler.scale_],
    )


def apply_scaler(rows: Union[Sequence[FlowRecord], np.ndarray], stats: ScalerStats,
                 features: Optional[Sequence[str]] = None) -> np.ndarray:
    if features is not None and list(features) != list(stats.feature_names):
        raise ScalerError(
            f"Feature mismatch: got {list(features)}, scaler fitted on {stats.feature_names}"
        )
    if isinstance(rows, np.ndarray):
        X = np.asarray(rows, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(stats.feature_names):
            raise ScalerError(f"Expected {len(stats.feature_names)} columns, got shape {X.shape}")
    else:
        X = feature_matrix(rows, stats.feature_names)
    mean = np.asarray(stats.mean, dtype=np.float64)
    stdev = np.asarray(stats.stdev, dtype=np.float64)
    return (X - mean) / stdev


def save_scaler(stats: ScalerStats, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(stats.model_dump_json(indent=2), encoding="utf-8")
    return path


def load_scaler(path: Union[str, Path]) -> ScalerStats:
    return ScalerStats.model_validate_json(Path(path).read_text(encoding="utf-8"))


def _partition(rows: Sequence[FlowRecord], spec: SplitSpec) -> Tuple[List[int], List[int], List[int]]:
    if not rows:
        raise SplitError("Cannot split an empty dataset")
    strata: Dict[object, List[int]] = defaultdict(list)
    for i, r in enumerate(rows):
        strata[getattr(r, spec.stratify_on)].append(i)

    rng = np.random.default_rng(spec.seed)
    train, val, test = [], [], []
    for key in sorted(strata, key=str):
        members = strata[key]
        n = len(members)
        if n < 2:
            logger.warning(f"Stratum {key!r} has {n} row(s); assigned to train")
            train.extend(members)
            continue
        order = [members[j] for j in rng.permutation(n)]
        n_train = round_half_up(spec.train_fraction * n)
        n_val = min(round_half_up(spec.validation_fraction * n), n - n_train)
        train.extend(order[:n_train])
        val.extend(order[n_train:n_train + n_val])
        test.extend(order[n_train + n_val:])
    return sorted(train), sorted(val), sorted(test)


def split_stratified(rows: Sequence[FlowRecord], spec: SplitSpec) -> Tuple[List[FlowRecord], List[FlowRecord]]:
    """Per-stratum train count is round(train_fraction * N_c); the rest is test."""
    if spec.validation_fraction:
        raise SplitError("validation_fraction set; use split_three_way")
    train, _, test = _partition(rows, spec)
    return [rows[i] for i in train], [rows[i] for i in test]


def split_three_way(rows: Sequence[FlowRecord], spec: SplitSpec) -> Tuple[List[FlowRecord], List[FlowRecord], List[FlowRecord]]:
    train, val, test = _partition(rows, spec)
    return [rows[i] for i in train], [rows[i] for i in val], [rows[i] for i in test]
