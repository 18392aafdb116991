"""Run manifest: one JSON file captures everything a run needs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .embeddings import ProviderDescriptor
from .metrics import DEFAULT_ALPHA, DEFAULT_TAU
from .pipeline import PipelineConfig
from .rewards import RewardConfig


@dataclass
class RunManifest:
    dataset: str
    encoder: ProviderDescriptor
    output_dir: str
    predictions: Optional[str | dict[str, str]] = None
    model_endpoints: Optional[list[dict[str, str]]] = None
    tau: float = DEFAULT_TAU
    alpha: float = DEFAULT_ALPHA
    seed: int = 42
    cache_dir: Optional[str] = None
    phases_enabled: tuple[int, ...] = (1, 2, 3, 4)
    generators: list[dict[str, str]] = field(default_factory=list)
    validator: Optional[dict[str, str]] = None
    judge_endpoint: Optional[str] = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    emit_pairs: bool = True
    retry_budget: int = 2
    timeout_ms: int = 30000

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")

    def require_eval_inputs(self) -> None:
        has_predictions = self.predictions is not None
        has_endpoints = bool(self.model_endpoints)
        if has_predictions == has_endpoints:
            raise ValueError(
                "eval runs need exactly one of a predictions path or model endpoints")

    def predictions_by_model(self) -> dict[str, str]:
        """Normalize the predictions field to {model_name: path}."""
        if self.predictions is None:
            return {}
        if isinstance(self.predictions, str):
            return {"model": self.predictions}
        return dict(self.predictions)


def default_manifest_dict() -> dict[str, Any]:
    path = resources.files("crystal_eval").joinpath("data/default_manifest.json")
    return json.loads(path.read_text(encoding="utf-8"))


def manifest_from_dict(obj: dict[str, Any], base_dir: Optional[Path] = None) -> RunManifest:
    defaults = default_manifest_dict()
    merged = {**defaults, **{k: v for k, v in obj.items() if v is not None}}

    def resolve(path_value):
        if path_value is None or base_dir is None:
            return path_value
        if isinstance(path_value, dict):
            return {k: str((base_dir / v)) if not Path(v).is_absolute() else v
                    for k, v in path_value.items()}
        p = Path(path_value)
        return str(base_dir / p) if not p.is_absolute() else str(p)

    pipeline_cfg = {**defaults.get("pipeline", {}), **(obj.get("pipeline") or {})}
    phases = tuple(merged.get("phases_enabled", (1, 2, 3, 4)))
    return RunManifest(
        dataset=resolve(merged["dataset"]),
        encoder=ProviderDescriptor.from_dict(merged["encoder"]),
        output_dir=resolve(merged["output_dir"]),
        predictions=resolve(obj.get("predictions")),
        model_endpoints=obj.get("model_endpoints"),
        tau=float(merged["tau"]),
        alpha=float(merged["alpha"]),
        seed=int(merged["seed"]),
        cache_dir=resolve(merged.get("cache_dir")),
        phases_enabled=phases,
        generators=merged.get("generators") or [],
        validator=obj.get("validator"),
        judge_endpoint=merged.get("judge_endpoint"),
        pipeline=PipelineConfig(
            tau_gen=float(pipeline_cfg.get("tau_gen", 0.45)),
            max_rounds=int(pipeline_cfg.get("max_rounds", 2)),
            temperature=float(pipeline_cfg.get("temperature", 1.0)),
            base_seed=int(merged["seed"]),
            template_dir=(Path(pipeline_cfg["template_dir"])
                          if pipeline_cfg.get("template_dir") else None),
            phases_enabled=phases,
        ),
        reward=RewardConfig.from_dict(merged.get("reward") or {}),
        emit_pairs=bool(merged.get("emit_pairs", True)),
        retry_budget=int(merged.get("retry_budget", 2)),
        timeout_ms=int(merged.get("timeout_ms", 30000)),
    )


def load_manifest(path: str | Path) -> RunManifest:
    path = Path(path)
    obj = json.loads(path.read_text(encoding="utf-8"))
    return manifest_from_dict(obj, base_dir=path.parent)
