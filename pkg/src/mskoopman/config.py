"""Experiment configuration (INI files, ``[meta] config_version = 1``).

Sections and keys::

    [plant]       name (VanDerPol | Duffing | LinearTest) plus its parameters
    [data]        horizon, step_size, num_trajectories, init_box, input_amp,
                  train_seed, test_seed
    [dictionary]  truncation (total | max), degree, include_raw_state, scale,
                  dimension_cap
    [training]    method (onestep | multistep), beta, tau, horizon, onestep_pairs
    [pruning]     epsilon, tau, retrain
    [mpc]         horizon, onestep_horizon, q, r, p_term, u_min, u_max,
                  x_min, x_max, x0, sim_steps
    [output]      directory

Vectors are whitespace separated; ``init_box`` lists ``lo hi`` pairs
separated by ``;``. Weights ``q``, ``r``, ``p_term`` are diagonals (a
single value is repeated). The output directory may be overridden by the
``MSKOOPMAN_OUTPUT_DIR`` environment variable; relative directories are
resolved against the current working directory.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .dictionary import Dictionary, build_dictionary
from .dynamics import PlantSpec, SamplingSpec
from .errors import ConfigError, KoopmanError
from .qp import MpcConfig

CONFIG_VERSION = 1
OUTPUT_ENV = "MSKOOPMAN_OUTPUT_DIR"
BUILTIN_CONFIGS = ("vdp", "duffing")


@dataclass(frozen=True)
class DictionaryConfig:
    truncation: str
    degree: int
    include_raw_state: bool
    scale: bool
    dimension_cap: int


@dataclass(frozen=True)
class TrainingConfig:
    method: str
    beta: float
    tau: float
    horizon: int
    onestep_pairs: str


@dataclass(frozen=True)
class PruningConfig:
    epsilon: float
    tau: float
    retrain: bool


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    plant: PlantSpec
    sampling: SamplingSpec
    test_seed: int
    dictionary: DictionaryConfig
    training: TrainingConfig
    pruning: PruningConfig
    mpc: MpcConfig
    onestep_mpc_horizon: int
    x0: Tuple[float, ...]
    sim_steps: int
    output_dir: Path
    source: Optional[str] = None

    @property
    def train_sampling(self) -> SamplingSpec:
        return self.sampling

    @property
    def test_sampling(self) -> SamplingSpec:
        return replace(self.sampling, seed=self.test_seed)

    def build_dictionary(self) -> Dictionary:
        d = self.dictionary
        return build_dictionary(self.plant.n_x, d.truncation, d.degree, d.include_raw_state,
                                self.sampling.init_box if d.scale else None, d.dimension_cap)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Override the training seed; the test seed keeps its offset."""
        offset = self.test_seed - self.sampling.seed
        return replace(self, sampling=replace(self.sampling, seed=seed), test_seed=seed + offset)


def _floats(text: str) -> list:
    return [float(v) for v in text.replace(",", " ").split()]


def _diag(text: str, n: int) -> np.ndarray:
    vals = _floats(text)
    if len(vals) == 1:
        vals = vals * n
    if len(vals) != n:
        raise ConfigError(f"expected 1 or {n} diagonal entries, got {len(vals)}")
    return np.diag(vals)


def _bound(sec, key, n):
    text = sec.get(key, "").strip()
    if not text:
        return None
    vals = _floats(text)
    if len(vals) == 1:
        vals = vals * n
    if len(vals) != n:
        raise ConfigError(f"[mpc] {key}: expected 1 or {n} entries")
    return np.array(vals)


def resolve_config_path(name_or_path: str) -> Path:
    """A file path, or the name of a bundled configuration (``vdp``, ``duffing``)."""
    p = Path(name_or_path)
    if p.exists():
        return p
    stem = p.stem if p.suffix == ".cfg" else p.name
    if stem in BUILTIN_CONFIGS:
        return Path(str(resources.files("mskoopman") / "configs" / f"{stem}.cfg"))
    raise ConfigError(f"configuration file not found: {name_or_path}")


def load_config(name_or_path: str) -> ExperimentConfig:
    path = resolve_config_path(name_or_path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str  # keep LinearTest keys such as A_1_2 case-sensitive
    try:
        with open(path) as fh:
            cp.read_file(fh)
        return _parse(cp, str(path))
    except ConfigError:
        raise
    except (configparser.Error, KeyError, ValueError, KoopmanError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse(cp: configparser.ConfigParser, source: str) -> ExperimentConfig:
    version = cp.getint("meta", "config_version", fallback=None)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config_version must be {CONFIG_VERSION}, got {version}")
    for section in ("plant", "data", "dictionary", "training", "pruning", "mpc", "output"):
        if not cp.has_section(section):
            raise ConfigError(f"missing section [{section}]")

    ps = cp["plant"]
    params = {k: float(v) for k, v in ps.items() if k != "name"}
    plant = PlantSpec.from_params(ps["name"], params)

    ds = cp["data"]
    box = tuple(tuple(_floats(part)) for part in ds["init_box"].split(";"))
    if any(len(b) != 2 for b in box):
        raise ConfigError("[data] init_box must be 'lo hi; lo hi; ...'")
    sampling = SamplingSpec(ds.getint("horizon"), ds.getfloat("step_size"),
                            ds.getint("num_trajectories"), box, ds.getfloat("input_amp"),
                            ds.getint("train_seed"))
    test_seed = ds.getint("test_seed")
    if test_seed < 0:
        raise ConfigError("[data] test_seed must be nonnegative")

    dc = cp["dictionary"]
    dictionary = DictionaryConfig(dc.get("truncation", "total"), dc.getint("degree"),
                                  dc.getboolean("include_raw_state", True),
                                  dc.getboolean("scale", False),
                                  dc.getint("dimension_cap", 10_000))
    if dictionary.truncation not in ("total", "max") or dictionary.degree < 0:
        raise ConfigError("[dictionary] truncation must be total|max and degree >= 0")

    tc = cp["training"]
    training = TrainingConfig(tc.get("method", "multistep"), tc.getfloat("beta", 1e-8),
                              tc.getfloat("tau", 0.0), tc.getint("horizon", sampling.horizon),
                              tc.get("onestep_pairs", "all"))
    if training.method not in ("onestep", "multistep"):
        raise ConfigError("[training] method must be onestep or multistep")
    if training.beta < 0 or training.tau < 0:
        raise ConfigError("[training] beta and tau must be nonnegative")
    if not 1 <= training.horizon <= sampling.horizon:
        raise ConfigError("[training] horizon must be within the data horizon")
    if training.onestep_pairs not in ("all", "first"):
        raise ConfigError("[training] onestep_pairs must be all or first")

    pc = cp["pruning"]
    pruning = PruningConfig(pc.getfloat("epsilon"), pc.getfloat("tau", 0.0),
                            pc.getboolean("retrain", False))
    if pruning.epsilon < 0 or pruning.tau < 0:
        raise ConfigError("[pruning] epsilon and tau must be nonnegative")

    mc = cp["mpc"]
    n_x, n_u = plant.n_x, plant.n_u
    H = mc.getint("horizon", training.horizon)
    if not 1 <= H <= training.horizon:
        raise ConfigError("[mpc] horizon must be within the training horizon")
    mpc = MpcConfig(H, _diag(mc.get("q", "1"), n_x), _diag(mc.get("r", "0.01"), n_u),
                    _diag(mc.get("p_term", mc.get("q", "1")), n_x),
                    _bound(mc, "u_min", n_u), _bound(mc, "u_max", n_u),
                    _bound(mc, "x_min", n_x), _bound(mc, "x_max", n_x))
    onestep_H = mc.getint("onestep_horizon", H)
    if not 1 <= onestep_H <= training.horizon:
        raise ConfigError("[mpc] onestep_horizon must be within the training horizon")
    x0 = tuple(_floats(mc["x0"]))
    if len(x0) != n_x:
        raise ConfigError(f"[mpc] x0 must have {n_x} entries")
    sim_steps = mc.getint("sim_steps")
    if sim_steps < 0:
        raise ConfigError("[mpc] sim_steps must be nonnegative")

    out = os.environ.get(OUTPUT_ENV) or cp["output"].get("directory", "output")
    return ExperimentConfig(plant, sampling, test_seed, dictionary, training, pruning, mpc,
                            onestep_H, x0, sim_steps, Path(out), source)
