"""
Configuration module - loads run settings from a YAML file, with defaults for everything
"""

import logging
import os
from pathlib import Path
from typing import Optional

import yaml

from helper import DEFAULT_SCHEMES
from position_maps import SchemeParams

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = [0.1, 0.3, 0.6, 1.0]


class Config:
    """Run configuration"""

    def __init__(self):
        self._config: dict = {}
        self._path: Optional[str] = None
        self._loaded: bool = False

    def load_from_yaml(self, config_path: Optional[str] = None) -> None:
        """
        Load configuration from YAML file.

        Args:
            config_path: Path to config file. If None:
              1) uses CRPA_CONFIG env var if set
              2) else tries <project_root>/config/crpa.config.yaml
              3) else tries <project_root>/crpa.config.yaml
              4) else keeps the built-in defaults

        Raises:
            FileNotFoundError: If an explicitly named configuration file is not found.
        """
        if self._loaded and config_path is None:
            return

        explicit = config_path is not None
        if config_path is None:
            config_path = os.getenv("CRPA_CONFIG")
            explicit = config_path is not None

        project_root = Path(__file__).parent.parent
        if config_path is None:
            for candidate in (project_root / "config" / "crpa.config.yaml", project_root / "crpa.config.yaml"):
                if candidate.exists():
                    config_path = str(candidate)
                    break

        if config_path is None:
            logger.info("No configuration file found, using defaults")
            self._config = {}
        else:
            if explicit and not os.path.exists(config_path):
                raise FileNotFoundError(
                    f"Configuration file not found at {config_path}. "
                    "Pass an existing file with --config or fix the CRPA_CONFIG environment variable."
                )
            logger.info(f"Configuration file found at {config_path}")
            with open(config_path, "r") as f:
                self._config = yaml.safe_load(f) or {}
            self._path = config_path

        self._validate_required()
        self._loaded = True

    def _validate_required(self) -> None:
        """
        Validate value ranges of the loaded configuration.
        Collects every problem and raises one ValueError.
        """
        errors = []
        if self.rope_base <= 1:
            errors.append(f"rope.base must be > 1, got {self.rope_base}")
        if self.rope_dim < 2 or self.rope_dim % 2:
            errors.append(f"rope.dim must be even and >= 2, got {self.rope_dim}")
        yarn = self._section("yarn")
        if float(yarn.get("alpha", 1.0)) >= float(yarn.get("beta", 32.0)):
            errors.append("yarn.alpha must be smaller than yarn.beta")
        if float(yarn.get("temperature", 1.0)) <= 0:
            errors.append("yarn.temperature must be positive")
        sigmas = self.sim_schedule.get("sigmas")
        if sigmas is not None:
            if any(not 0 <= float(s) <= 1 for s in sigmas):
                errors.append("sim.schedule.sigmas must lie in [0, 1]")
            if any(float(b) > float(a) for a, b in zip(sigmas, sigmas[1:])):
                errors.append("sim.schedule.sigmas must be monotone non-increasing")
        if self.boundary_n_pad_lr < 0 or self.boundary_n_pad_hr < 0:
            errors.append("boundary.n_pad_lr and boundary.n_pad_hr must be >= 0")
        if not 0 <= self.probe_threshold <= 1:
            errors.append(f"probe.threshold must lie in [0, 1], got {self.probe_threshold}")
        if self.pool_mode not in ("mean", "stride0"):
            errors.append(f"attention.pool must be 'mean' or 'stride0', got {self.pool_mode!r}")
        if self.probe_weights not in ("query", "key"):
            errors.append(f"probe.weights must be 'query' or 'key', got {self.probe_weights!r}")
        if self.kernel_top_n < 1:
            errors.append(f"kernel.top_n must be >= 1, got {self.kernel_top_n}")
        if errors:
            raise ValueError(
                "Configuration validation failed. " + " ".join(errors)
            )

    def _section(self, name: str) -> dict:
        return self._config.get(name, {}) or {}

    @property
    def path(self) -> Optional[str]:
        """File the configuration was read from, None when running on defaults"""
        return self._path

    # ---- rope ----

    @property
    def rope_dim(self) -> int:
        """Head dimension used by freqs/probe"""
        return int(self._section("rope").get("dim", 64))

    @property
    def rope_base(self) -> float:
        """Geometric frequency base"""
        return float(self._section("rope").get("base", 10000.0))

    @property
    def ntk_extension(self) -> Optional[float]:
        """Pure NTK extension factor; None means the layout ratio"""
        val = self._section("ntk").get("s")
        return None if val is None else float(val)

    @property
    def pi_ntk_linear_scale(self) -> float:
        return float(self._section("pi_ntk").get("linear_scale", 1.5))

    @property
    def pi_ntk_extension(self) -> float:
        return float(self._section("pi_ntk").get("s", 1.333))

    @property
    def yarn_params(self) -> dict:
        """YaRN constants; `s` None means the layout ratio"""
        yarn = self._section("yarn")
        s = yarn.get("s")
        return {
            "train_length": float(yarn.get("train_length", 32.0)),
            "s": None if s is None else float(s),
            "alpha": float(yarn.get("alpha", 1.0)),
            "beta": float(yarn.get("beta", 32.0)),
            "temperature": float(yarn.get("temperature", 1.0)),
        }

    @property
    def scheme_params(self) -> SchemeParams:
        """Baseline constants bundled for the attention layer"""
        yarn = self.yarn_params
        return SchemeParams(
            ntk_extension=self.ntk_extension,
            pi_ntk_linear_scale=self.pi_ntk_linear_scale,
            pi_ntk_extension=self.pi_ntk_extension,
            yarn_train_length=yarn["train_length"],
            yarn_extension=yarn["s"],
            yarn_alpha=yarn["alpha"],
            yarn_beta=yarn["beta"],
            yarn_temperature=yarn["temperature"],
        )

    # ---- probe ----

    @property
    def probe_delta_min(self) -> int:
        return int(self._section("probe").get("delta_min", -64))

    @property
    def probe_delta_max(self) -> int:
        return int(self._section("probe").get("delta_max", 64))

    @property
    def probe_pairs(self) -> int:
        """Sampled (q, k) pairs for synthetic probes"""
        return int(self._section("probe").get("pairs", 4096))

    @property
    def probe_threshold(self) -> float:
        """rds above which a head counts as RoPE-dominant"""
        return float(self._section("probe").get("threshold", 0.085))

    @property
    def probe_weights(self) -> str:
        """Projection whose rows the rds score reads"""
        return self._section("probe").get("weights", "query")

    @property
    def kernel_top_n(self) -> int:
        """Dominant frequencies listed by the kernel command"""
        return int(self._section("kernel").get("top_n", 4))

    @property
    def probe_num_heads(self) -> int:
        return int(self._section("probe").get("num_heads", 8))

    @property
    def probe_sharpness(self) -> float:
        return float(self._section("probe").get("sharpness", 2.0))

    # ---- boundary / attention ----

    @property
    def boundary_enabled(self) -> bool:
        return bool(self._section("boundary").get("enabled", True))

    @property
    def boundary_n_pad_lr(self) -> int:
        return int(self._section("boundary").get("n_pad_lr", 2))

    @property
    def boundary_n_pad_hr(self) -> int:
        return int(self._section("boundary").get("n_pad_hr", 2))

    @property
    def pool_mode(self) -> str:
        """How LR queries see HR keys: mean | stride0"""
        return self._section("attention").get("pool", "mean")

    # ---- sim ----

    @property
    def sim_grid(self) -> int:
        """LR grid extent per axis"""
        return int(self._section("sim").get("grid", 32))

    @property
    def sim_upsample(self) -> int:
        return int(self._section("sim").get("upsample", 2))

    @property
    def sim_channels(self) -> int:
        return int(self._section("sim").get("channels", 4))

    @property
    def sim_num_heads(self) -> int:
        return int(self._section("sim").get("num_heads", 2))

    @property
    def sim_head_dim(self) -> int:
        return int(self._section("sim").get("head_dim", 32))

    @property
    def sim_kernel_width(self) -> float:
        return float(self._section("sim").get("kernel_width", 1.0))

    @property
    def sim_eta(self) -> float:
        return float(self._section("sim").get("eta", 0.2))

    @property
    def sim_target_pull(self) -> float:
        return float(self._section("sim").get("target_pull", 0.5))

    @property
    def sim_sigma_shift(self) -> float:
        return float(self._section("sim").get("sigma_shift", 1.0))

    @property
    def sim_schemes(self) -> list[str]:
        return list(self._section("sim").get("schemes", DEFAULT_SCHEMES))

    @property
    def sim_ratios(self) -> list[float]:
        return [float(r) for r in self._section("sim").get("ratios", DEFAULT_RATIOS)]

    @property
    def sim_schedule(self) -> dict:
        """Raw schedule mapping, filled with defaults (10 coarse + 20 mixed, HR ratio 0.3)"""
        sched = {
            "total_steps": 30,
            "coarse_steps": 10,
            "mixed_steps": 20,
            "fine_steps": 0,
            "hr_token_ratio": 0.3,
        }
        sched.update(self._section("sim").get("schedule", {}) or {})
        return sched

    @property
    def sim_hr_token_ratio(self) -> float:
        return float(self.sim_schedule["hr_token_ratio"])

    # ---- misc ----

    @property
    def seed(self) -> int:
        """
        Global seed.
        Priority:
        1. Environment variable CRPA_SEED
        2. Configuration file
        """
        env_seed = os.getenv("CRPA_SEED")
        if env_seed:
            return int(env_seed)
        return int(self._config.get("seed", 0))

    @property
    def logging_config(self) -> dict:
        """Get logging configuration"""
        return self._section("logging")
