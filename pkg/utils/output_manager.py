import json
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from config.settings import settings
from models.spin_models import CoherenceTrace
from utils.logging_config import logger

FLOAT_FORMAT = '%.17g'


class OutputManager:
    """Writes result tables as CSV (or JSON) with a provenance sidecar"""

    def __init__(self, out_dir: Path = None, fmt: str = "csv"):
        self.out_dir = Path(out_dir or settings.OUTPUT_DIR)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.fmt = fmt

    def provenance(self, config: Dict[str, Any], seed: Optional[int], wall_clock: float,
                   cluster_counts: Dict[Any, Any] = None, flags: Dict[str, Any] = None,
                   extra: Dict[str, Any] = None) -> Dict[str, Any]:
        """Metadata block every output carries"""
        metadata = {
            'version': settings.VERSION,
            'config': config,
            'seed': seed,
            'rng': settings.RNG_ALGORITHM,
            'wall_clock_s': wall_clock,
            'flags': flags or {},
            'written_at': datetime.now().isoformat(),
        }
        if cluster_counts:
            metadata['cluster_counts'] = cluster_counts
        if extra:
            metadata.update(extra)
        return metadata

    def write_table(self, name: str, frame: pd.DataFrame, metadata: Dict[str, Any]) -> Dict[str, Path]:
        """CSV + JSON sidecar, or a single JSON holding both"""
        paths = {}
        sidecar = self.out_dir / f"{name}.json"
        payload = {'metadata': self._make_serializable(metadata)}
        if self.fmt == "csv":
            csv_path = self.out_dir / f"{name}.csv"
            frame.to_csv(csv_path, index=False, float_format=FLOAT_FORMAT)
            paths['csv'] = csv_path
        else:
            payload['data'] = self._make_serializable(frame.to_dict(orient='list'))
        with open(sidecar, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2, default=str)
        paths['json'] = sidecar
        logger.debug(f"Wrote {name} ({len(frame)} rows) to {self.out_dir}")
        return paths

    def write_trace(self, name: str, trace: CoherenceTrace, metadata: Dict[str, Any]) -> Dict[str, Path]:
        merged = dict(metadata)
        merged.setdefault('trace', trace.metadata)
        merged['divergent'] = trace.divergent
        return self.write_table(name, trace_frame(trace), merged)

    def _make_serializable(self, obj):
        """Convert object to JSON serializable format"""
        if hasattr(obj, 'model_dump'):
            return self._make_serializable(obj.model_dump(mode='json'))
        elif hasattr(obj, 'to_dict'):
            return self._make_serializable(obj.to_dict())
        elif isinstance(obj, dict):
            return {str(k): self._make_serializable(v) for k, v in obj.items()}
        elif isinstance(obj, (list, tuple)):
            return [self._make_serializable(item) for item in obj]
        elif isinstance(obj, np.ndarray):
            return self._make_serializable(obj.tolist())
        elif isinstance(obj, (np.integer, np.bool_)):
            return obj.item()
        elif isinstance(obj, (float, np.floating)):
            value = float(obj)
            # JSON has no inf/nan
            return value if math.isfinite(value) else str(value)
        elif isinstance(obj, complex):
            return [obj.real, obj.imag]
        elif isinstance(obj, Path):
            return str(obj)
        else:
            try:
                json.dumps(obj)
                return obj
            except (TypeError, ValueError):
                return str(obj)


def trace_frame(trace: CoherenceTrace) -> pd.DataFrame:
    values = np.asarray(trace.values, dtype=complex)
    return pd.DataFrame({
        'time_s': np.asarray(trace.times, dtype=float),
        're': values.real,
        'im': values.imag,
        'abs': np.abs(values),
    })
