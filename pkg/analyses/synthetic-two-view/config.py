"""Experiment configuration: `key = value` text mirroring OptimConfig and LossWeights."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Union

from errors import InvalidInputError, ParseError
from losses import LossWeights
from optim import OptimConfig
from utils import read_key_values


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise ValueError(value)
    return value == "on"


def _choice(*options: str) -> Callable[[str], str]:
    def parse(value: str) -> str:
        if value not in options:
            raise ValueError(value)
        return value

    return parse


# key -> (parser, default)
KEYS: dict[str, tuple[Callable[[str], Any], Any]] = {
    "inputs": (str, None),
    "output": (str, None),
    "max_iterations": (int, 2000),
    "initial_lr": (float, 1e-4),
    "record_every": (int, 100),
    "seed": (int, 0),
    "precision": (_choice("double"), "double"),
    "lambda_ph": (float, 0.15),
    "lambda_gc": (float, 0.1),
    "lambda_ssim": (float, 0.85),
    "lambda_smooth": (float, 0.01),
    "c": (float, 5.0),
    "num_scales": (int, 4),
    "sigma_mode": (_choice("literal", "mean"), "literal"),
    "scale_transform": (_on_off, True),
    "grad_step": (float, 1e-4),
    "grad_samples": (int, 64),
    "threshold": (float, 1e-5),
}


@dataclass
class ExperimentConfig:
    path: Path
    inputs: Path
    output: Path
    optim: OptimConfig
    precision: str = "double"
    grad_step: float = 1e-4
    grad_samples: int = 64
    threshold: float = 1e-5

    @property
    def weights(self) -> LossWeights:
        return self.optim.weights

    def with_overrides(
        self, seed: Optional[int] = None, num_scales: Optional[int] = None, threshold: Optional[float] = None
    ) -> ExperimentConfig:
        optim = self.optim
        if num_scales is not None:
            optim = dataclasses.replace(optim, weights=dataclasses.replace(optim.weights, num_scales=num_scales))
        if seed is not None:
            optim = dataclasses.replace(optim, seed=seed)
        return dataclasses.replace(
            self, optim=optim, threshold=self.threshold if threshold is None else threshold
        )


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    values: dict[str, Any] = {}
    for entry in read_key_values(path):
        if entry.key not in KEYS:
            raise ParseError(str(path), entry.line, f"unknown key '{entry.key}'")
        if entry.key in values:
            raise ParseError(str(path), entry.line, f"duplicate key '{entry.key}'")
        parser, _ = KEYS[entry.key]
        try:
            values[entry.key] = parser(entry.value)
        except ValueError:
            raise ParseError(str(path), entry.line, f"invalid value for '{entry.key}': '{entry.value}'")

    for key in ("inputs", "output"):
        if key not in values:
            raise ParseError(str(path), None, f"missing required key '{key}'")
    settings = {key: values.get(key, default) for key, (_, default) in KEYS.items()}

    try:
        weights = LossWeights(
            lambda_ph=settings["lambda_ph"],
            lambda_gc=settings["lambda_gc"],
            lambda_ssim=settings["lambda_ssim"],
            lambda_smooth_base=settings["lambda_smooth"],
            c=settings["c"],
            num_scales=settings["num_scales"],
            sigma_mode=settings["sigma_mode"],
            scale_transform=settings["scale_transform"],
        )
        optim = OptimConfig(
            max_iterations=settings["max_iterations"],
            initial_lr=settings["initial_lr"],
            weights=weights,
            seed=settings["seed"],
            record_every=settings["record_every"],
        )
    except InvalidInputError as e:
        raise ParseError(str(path), None, str(e)) from None
    if settings["grad_step"] <= 0 or settings["grad_samples"] < 1 or settings["threshold"] <= 0:
        raise ParseError(str(path), None, "grad_step and threshold must be positive, grad_samples at least 1")

    # relative paths are relative to the config file
    base = path.parent
    config = ExperimentConfig(
        path=path,
        inputs=base / settings["inputs"],
        output=base / settings["output"],
        optim=optim,
        precision=settings["precision"],
        grad_step=settings["grad_step"],
        grad_samples=settings["grad_samples"],
        threshold=settings["threshold"],
    )
    logging.debug(f"Loaded experiment config {path}: {config}")
    return config
