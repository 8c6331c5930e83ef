# npmatch/checkpoint.py
"""
Versioned JSON checkpoints.

Layout::

    {"format": "npmatch-checkpoint", "version": 1,
     "dims": {...}, "config": {...}, "metadata": {...},
     "tensors": {"student/encoder.w1": {"shape": [...], "data": [...]}, "ema/...": ...},
     "banks": {"labeled": {"capacity", "pushes", "evictions", "features", "probs"}, ...}}

Tensors are stored row-major as flat float lists; keys are sorted so files are byte-stable.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np

from npmatch.errors import CheckpointError, NpMatchError
from npmatch.nn_core import EmaShadow
from npmatch.np_model import MemoryBank, ModelDims, NpModel

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "npmatch-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class CheckpointBundle:
    student: NpModel
    teacher: NpModel
    banks: Dict[str, MemoryBank]
    config: Dict[str, Any] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def dims(self) -> ModelDims:
        return self.student.dims


def _tensor_record(array: np.ndarray) -> Dict[str, Any]:
    array = np.asarray(array, dtype=np.float64)
    return {"shape": list(array.shape), "data": [float(x) for x in array.ravel()]}


def _tensor_from_record(record: Any, name: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in record["shape"])
        data = np.asarray(record["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"Tensor '{name}' is malformed: {e}", {"tensor": name}) from e
    if data.size != math.prod(shape):
        raise CheckpointError(
            f"Tensor '{name}' holds {data.size} values for shape {list(shape)}", {"tensor": name}
        )
    if not np.all(np.isfinite(data)):
        raise CheckpointError(f"Tensor '{name}' contains non-finite values", {"tensor": name})
    return data.reshape(shape)


def checkpoint_document(
    student: NpModel,
    shadow: Union[EmaShadow, NpModel],
    banks: Mapping[str, MemoryBank],
    config: Optional[Dict[str, Any]] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    ema_params = shadow.params if isinstance(shadow, EmaShadow) else shadow.parameters()
    tensors = {f"student/{name}": _tensor_record(value) for name, value in student.parameters().items()}
    tensors.update({f"ema/{name}": _tensor_record(value) for name, value in ema_params.items()})
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": asdict(student.dims),
        "config": config or {},
        "metadata": metadata or {},
        "tensors": tensors,
        "banks": {
            name: {
                "capacity": bank.capacity,
                "pushes": bank.pushes,
                "evictions": bank.evictions,
                "features": _tensor_record(bank.features),
                "probs": _tensor_record(bank.probs),
            }
            for name, bank in banks.items()
        },
    }


def save_checkpoint(
    path: Union[str, Path],
    student: NpModel,
    shadow: Union[EmaShadow, NpModel],
    banks: Mapping[str, MemoryBank],
    config: Optional[Dict[str, Any]] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = checkpoint_document(student, shadow, banks, config, metadata)
    with open(path, "w") as f:
        json.dump(document, f, indent=2, sort_keys=True)
    logger.info(f"[checkpoint] wrote {len(document['tensors'])} tensors and {len(banks)} banks to {path}")
    return path


def _model_from_tensors(dims: ModelDims, tensors: Mapping[str, Any], prefix: str) -> NpModel:
    model = NpModel.initialize(dims, seed=0)
    expected = set(model.parameters())
    found = {name[len(prefix):] for name in tensors if name.startswith(prefix)}
    if found != expected:
        raise CheckpointError(
            f"Checkpoint tensors under '{prefix}' do not match the model",
            {"missing": sorted(expected - found), "unexpected": sorted(found - expected)},
        )
    params = {name: _tensor_from_record(tensors[prefix + name], prefix + name) for name in expected}
    try:
        model.set_parameters(params)
    except NpMatchError as e:
        raise CheckpointError(f"Checkpoint tensor shapes do not match the model: {e.message}") from e
    return model


def load_checkpoint(path: Union[str, Path]) -> CheckpointBundle:
    """Read and validate a checkpoint; any defect raises CheckpointError."""
    path = Path(path)
    try:
        with open(path, "r") as f:
            document = json.load(f)
    except FileNotFoundError as e:
        raise CheckpointError(f"Checkpoint not found: {path}", {"path": str(path)}) from e
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"Checkpoint is not valid JSON: {e}", {"path": str(path)}) from e

    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("File is not an npmatch checkpoint", {"path": str(path)})
    if document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Unsupported checkpoint version {document.get('version')!r}", {"path": str(path)}
        )
    try:
        dims = ModelDims(**document["dims"])
        tensors = document["tensors"]
        bank_docs = document["banks"]
    except (KeyError, TypeError, NpMatchError) as e:
        raise CheckpointError(f"Checkpoint header is malformed: {e}", {"path": str(path)}) from e
    for section in ("tensors", "banks", "config", "metadata"):
        if not isinstance(document.get(section, {}), dict):
            raise CheckpointError(
                f"Checkpoint section '{section}' must be an object", {"path": str(path), "section": section}
            )

    student = _model_from_tensors(dims, tensors, "student/")
    teacher = _model_from_tensors(dims, tensors, "ema/")
    banks = {}
    for name, doc in bank_docs.items():
        if not isinstance(doc, dict):
            raise CheckpointError(f"Bank '{name}' must be an object", {"bank": name})
        features = _tensor_from_record(doc.get("features"), f"banks/{name}/features")
        probs = _tensor_from_record(doc.get("probs"), f"banks/{name}/probs")
        try:
            bank = MemoryBank(int(doc["capacity"]), dims.feature_dim, dims.num_classes)
            if features.shape[0] > bank.capacity:
                raise CheckpointError(f"Bank '{name}' holds more records than its capacity")
            bank.restore(features, probs, int(doc["pushes"]), int(doc["evictions"]))
        except CheckpointError:
            raise
        except (KeyError, TypeError, ValueError, NpMatchError) as e:
            raise CheckpointError(f"Bank '{name}' is malformed: {e}", {"bank": name}) from e
        banks[name] = bank
    logger.info(f"[checkpoint] loaded {path}")
    return CheckpointBundle(
        student=student,
        teacher=teacher,
        banks=banks,
        config=document.get("config", {}),
        metadata=document.get("metadata", {}),
    )
