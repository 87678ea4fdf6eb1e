"""Shared fixtures: small datasets and a narrow model profile for fast runs."""

from __future__ import annotations

import dataclasses

import pytest

from mibvqa import data as dt
from mibvqa.model import ModelConfig
from mibvqa.training import TrainConfig, model_config_for


# Narrow widths: every dimension cut so unit-level training runs take seconds.
TINY_WIDTHS = dict(d_h=12, d_q=12, d_ff=6, d_p=8, d_f=16, d_mlp=16, d_z=6)


def tiny_model_config(dataset: dt.Dataset, train_config: TrainConfig) -> ModelConfig:
    base = model_config_for(dataset, train_config)
    return dataclasses.replace(base, **TINY_WIDTHS)


@pytest.fixture(scope="session")
def small_dataset() -> dt.Dataset:
    """160 samples, default categories — shared by training/CLI-level tests."""
    return dt.generate_dataset(dt.DatasetConfig(n_samples=160, seed=7))


@pytest.fixture(scope="session")
def micro_dataset() -> dt.Dataset:
    """64 samples for the determinism checks that train twice."""
    return dt.generate_dataset(dt.DatasetConfig(n_samples=64, seed=9))
