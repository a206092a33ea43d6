import os
from typing import Optional

import yaml

from dyadic_sim.common import default_out_dir

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")
REGIONS_DIR = os.path.join(CONFIG_DIR, "regions")


def load_config(config_path=os.path.join(CONFIG_DIR, "experiments.yaml")) -> dict:
    """Parsed YAML file, or {} (with a printed error) when it cannot be read."""
    try:
        with open(config_path) as f:
            return yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        print(f"Could not load {config_path}: {e}")
        return {}


class ExperimentConfig:
    """
    Manifest of a named experiment.

    Args:
        name (str): The name of the experiment, one of the registered experiments.
        regions (list[str], optional):
            Region fixture names (files in configs/regions) or paths to region files.
            Defaults to an empty list.
        depth (int, optional):
            The decomposition depth k_max. Defaults to 11.
        seeds (list[int], optional):
            Seeds for the source, the agents and the Monte Carlo estimators.
            Defaults to [0].
        sessions (int, optional):
            Number of simulation sessions per region and seed. Defaults to 10000.
        out_dir (str, optional):
            Where artifacts are written. Defaults to $DYADIC_SIM_OUT or /tmp/dyadic_sim.
        eps (list[float], optional):
            Total variation targets of the truncated scheme. Defaults to [0.1, 0.05].
        t_values (list[float], optional):
            Correlation parameters of the ellipse sweep. Defaults to 0.0, 0.1, ..., 0.9.
        mc_samples (int, optional):
            Monte Carlo sample count of every estimator. Defaults to 100000.
        min_mass (float, optional):
            Partial cubes whose mass bound is below this are pruned into the residual.
            Defaults to 0 (no pruning).
        draws (int, optional):
            Randomized shift/scale draws of the averaging check. Defaults to 200.
        workers (int, optional):
            Threads used to classify each decomposition level. Defaults to 1.
    """

    name: str
    regions: list[str]
    depth: int
    seeds: list[int]
    sessions: int
    out_dir: str
    eps: list[float]
    t_values: list[float]
    mc_samples: int
    min_mass: float
    draws: int
    workers: int

    def __init__(
        self,
        name: str,
        regions: Optional[list[str]] = None,
        depth: int = 11,
        seeds: Optional[list[int]] = None,
        sessions: int = 10_000,
        out_dir: Optional[str] = None,
        eps: Optional[list[float]] = None,
        t_values: Optional[list[float]] = None,
        mc_samples: int = 100_000,
        min_mass: float = 0.0,
        draws: int = 200,
        workers: int = 1,
    ):
        assert name is not None
        if isinstance(regions, str):
            regions = regions.split(",")
        if isinstance(seeds, int):
            seeds = [seeds]
        if isinstance(eps, (int, float)):
            eps = [eps]
        eps = [float(e) for e in (eps if eps is not None else [0.1, 0.05])]
        assert all(0 < e < 1 for e in eps), f"eps values must lie in (0, 1), got {eps}"
        assert sessions >= 0
        assert mc_samples >= 1000, "Monte Carlo needs at least 1000 samples"
        assert min_mass >= 0
        self.name = name
        self.regions = list(regions or [])
        self.depth = int(depth)
        self.seeds = [int(s) for s in (seeds if seeds is not None else [0])]
        self.sessions = int(sessions)
        self.out_dir = out_dir or default_out_dir()
        self.eps = eps
        self.t_values = [
            float(t) for t in (t_values if t_values is not None else [i / 10 for i in range(10)])
        ]
        self.mc_samples = int(mc_samples)
        self.min_mass = float(min_mass)
        self.draws = int(draws)
        self.workers = int(workers)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "regions": self.regions,
            "depth": self.depth,
            "seeds": self.seeds,
            "sessions": self.sessions,
            "eps": self.eps,
            "t_values": self.t_values,
            "mc_samples": self.mc_samples,
            "min_mass": self.min_mass,
            "draws": self.draws,
            "workers": self.workers,
        }


EXPERIMENTS_DICT: dict[str, dict] = {
    cfg["name"]: cfg for cfg in load_config().get("experiments", [])
}


def _abbrev(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (list, tuple)):
        return ",".join(_abbrev(v) for v in value)
    if isinstance(value, float):
        return f"{value:g}"
    if isinstance(value, str):
        # region paths and fixture names: file stem, 4 letters per dash-separated word
        stem = os.path.splitext(os.path.basename(value))[0]
        return "-".join(word[:4] for word in stem.split("-"))
    return str(value)


def get_config_foldername(config: dict) -> str:
    """Short folder name for a set of manifest overrides, e.g. d=9_mm=1e-10_r=l-shap."""
    parts = []
    for key in sorted(config):
        initials = "".join(word[0] for word in key.split("_"))
        parts.append(f"{initials}={_abbrev(config[key])}")
    return "_".join(parts)
