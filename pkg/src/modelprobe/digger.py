"""Scan app archives (APK/ZIP) for embedded TFLite models and extract them."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine.model import EngineModel
from .errors import IoFailure, ModelFormatError, NotAnArchive, UnsupportedOp
from .tflite.model import DType
from .tflite.parser import FILE_IDENTIFIER, parse_model

logger = logging.getLogger(__name__)

MODEL_EXTENSIONS = (".tflite", ".lite")
OPERABILITY_SEED = 0  # fixed seed for the random-input forward check


class Detection(enum.Enum):
    BY_EXTENSION = "extension"
    BY_MAGIC = "magic"


class Operability(enum.Enum):
    EXECUTABLE = "executable"
    PARSED_NOT_EXECUTABLE = "parsed-not-executable"
    INVALID = "invalid"


@dataclass(frozen=True)
class ModelCandidate:
    archive_path: str
    entry_name: str
    detection: Detection
    size_bytes: int


@dataclass
class ExtractedModel:
    candidate: ModelCandidate
    bytes_digest: str
    output_path: str
    operability: Operability

    def manifest_record(self) -> dict:
        return {
            "archive": self.candidate.archive_path,
            "entry": self.candidate.entry_name,
            "detection": self.candidate.detection.value,
            "digest": self.bytes_digest,
            "operability": self.operability.value,
            "size_bytes": self.candidate.size_bytes,
        }


def scan_archive(path: str | Path) -> list[ModelCandidate]:
    """All entries matching the model naming convention or the TFL3 magic."""
    path = Path(path)
    if not path.exists():
        raise IoFailure(f"{path}: no such file")
    try:
        with zipfile.ZipFile(path) as zf:
            candidates = []
            for info in zf.infolist():
                if info.is_dir():
                    continue
                detection = None
                if info.filename.lower().endswith(MODEL_EXTENSIONS):
                    detection = Detection.BY_EXTENSION
                else:
                    try:
                        with zf.open(info) as fh:
                            head = fh.read(8)
                    except (OSError, zipfile.BadZipFile) as exc:
                        raise IoFailure(f"{path}:{info.filename}: {exc}") from exc
                    if len(head) == 8 and head[4:8] == FILE_IDENTIFIER:
                        detection = Detection.BY_MAGIC
                if detection is not None:
                    candidates.append(
                        ModelCandidate(
                            archive_path=str(path),
                            entry_name=info.filename,
                            detection=detection,
                            size_bytes=info.file_size,
                        )
                    )
            return candidates
    except zipfile.BadZipFile as exc:
        raise NotAnArchive(f"{path}: not a ZIP container") from exc
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def assess_operability(data: bytes) -> Operability:
    """Parse, then run a forward pass on seeded random input of the declared shape."""
    try:
        graph = parse_model(data)
    except ModelFormatError:
        return Operability.INVALID
    try:
        engine = EngineModel.from_graph(graph)
        rng = np.random.default_rng(OPERABILITY_SEED)
        shape = engine.input_spec.shape
        if any(d < 0 for d in shape):
            return Operability.PARSED_NOT_EXECUTABLE
        if engine.input_spec.dtype in (DType.UINT8, DType.INT8) and engine.input_spec.quant is not None:
            lo, hi = (0, 256) if engine.input_spec.dtype is DType.UINT8 else (-128, 128)
            q = rng.integers(lo, hi, size=shape)
            x = (q.astype(np.float32) - engine.input_spec.quant.zero_point) * engine.input_spec.quant.scale
        else:
            x = rng.uniform(0.0, 1.0, size=shape).astype(np.float32)
        out = engine.forward(x)
        if not np.all(np.isfinite(out)):
            return Operability.PARSED_NOT_EXECUTABLE
        return Operability.EXECUTABLE
    except (UnsupportedOp, ModelFormatError, ValueError):
        return Operability.PARSED_NOT_EXECUTABLE


def extract_models(candidates: list[ModelCandidate], out_dir: str | Path) -> list[ExtractedModel]:
    """Decompress candidates to digest-named files and classify operability."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"{out_dir}: {exc}") from exc

    extracted: list[ExtractedModel] = []
    seen: dict[str, str] = {}  # digest -> output path
    by_archive: dict[str, list[ModelCandidate]] = {}
    for cand in candidates:
        by_archive.setdefault(cand.archive_path, []).append(cand)

    for archive_path, group in by_archive.items():
        try:
            with zipfile.ZipFile(archive_path) as zf:
                for cand in group:
                    try:
                        data = zf.read(cand.entry_name)
                    except (KeyError, zipfile.BadZipFile, OSError) as exc:
                        raise IoFailure(f"{archive_path}:{cand.entry_name}: {exc}") from exc
                    digest = hashlib.sha256(data).hexdigest()
                    if digest in seen:
                        logger.info("duplicate model %s (digest %s), reusing %s",
                                    cand.entry_name, digest[:12], seen[digest])
                        output_path = seen[digest]
                        operability = next(
                            e.operability for e in extracted if e.bytes_digest == digest
                        )
                    else:
                        output_path = str(out_dir / f"{digest[:16]}.tflite")
                        try:
                            Path(output_path).write_bytes(data)
                        except OSError as exc:
                            raise IoFailure(f"{output_path}: {exc}") from exc
                        seen[digest] = output_path
                        operability = assess_operability(data)
                    extracted.append(
                        ExtractedModel(
                            candidate=cand,
                            bytes_digest=digest,
                            output_path=output_path,
                            operability=operability,
                        )
                    )
        except zipfile.BadZipFile as exc:
            raise NotAnArchive(f"{archive_path}: not a ZIP container") from exc
        except OSError as exc:
            raise IoFailure(f"{archive_path}: {exc}") from exc
    return extracted


def write_manifest(extracted: list[ExtractedModel], path: str | Path) -> None:
    records = [e.manifest_record() for e in extracted]
    Path(path).write_text(json.dumps(records, indent=2) + "\n")
