"""Flat ``section.key = value`` experiment configuration.

Blank lines and lines starting with ``#`` are ignored.  List values are comma
separated.  A profile supplies every default; a config file only overrides.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

PROFILES = {
    "desk": {
        "system.n_tx": "16",
        "system.n_rx": "4",
        "system.snr_db": "20",
        "channel.n_clusters": "3",
        "channel.paths_per_cluster": "10",
        "channel.angle_spread_deg": "5",
        "data.n_train": "10000",
        "data.n_val": "100",
        "data.n_test": "100",
        "diffusion.t_max": "100",
        "diffusion.s_init": "12",
        "diffusion.s_max": "64",
        "train.epochs": "100",
        "train.batch_size": "128",
        "train.learning_rate": "1e-3",
        "train.noisy_sigma_w_sq": "0",
        "sure.sigma_w_sq": "1.0",
        "sure.mc_epsilon": "1e-2",
        "sure.denoiser_epochs": "100",
        "sure.dm_epochs": "100",
        "sure.match_t_max": "1000",
        "estimator.grad_scale": "auto",
        "estimator.grad_scale_grid": "0.3,0.5,0.7,1,1.5,2,3,5,10",
        "estimator.enhanced": "false",
        "estimator.enhance_rounds": "3",
        "estimator.enhance_window": "0.5",
        "sweep.snr_db": "0,10,20,30",
        "sweep.alpha": "1.0",
        "sweep.bits": "0",
        "sweep.methods": "dm,ls,lmmse",
        "sweep.pilots": "qpsk",
        "sweep.warmup": "3",
    },
}
PROFILES["paper"] = {
    **PROFILES["desk"],
    "system.n_tx": "64",
    "system.n_rx": "16",
    "data.n_train": "100000",
    "train.epochs": "500",
    "train.learning_rate": "1e-4",
    "sure.dm_epochs": "500",
}

# keys whose value is a filesystem path, resolved against --out when relative
PATH_KEYS = ("data.train", "data.val", "data.test", "model.checkpoint", "model.sure_checkpoint",
             "plot.csv")
PATH_DEFAULTS = {
    "data.train": "train.dmce",
    "data.val": "val.dmce",
    "data.test": "test.dmce",
    "model.checkpoint": "model.ckpt",
    "model.sure_checkpoint": "sure_dm.ckpt",
    "plot.csv": "results.csv",
}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        if "." not in key:
            raise ConfigError(f"{source}:{lineno}: key {key!r} lacks a section prefix")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


@dataclass
class ExperimentConfig:
    values: dict
    out_dir: Path
    seed: int
    profile: str = "desk"
    sources: list = field(default_factory=list)

    @classmethod
    def load(cls, path, out_dir, seed: int = 0, profile: str = "desk") -> "ExperimentConfig":
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        values = dict(PROFILES[profile])
        values.update(PATH_DEFAULTS)
        sources = []
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
            user = parse_config_text(text, str(path))
            unknown = sorted(set(user) - set(values))
            if unknown:
                raise ConfigError(f"{path}: unknown keys {', '.join(unknown)}")
            values.update(user)
            sources.append(str(path))
        if seed < 0 or seed >= 2 ** 64:
            raise ConfigError(f"seed must fit in u64, got {seed}")
        return cls(values, Path(out_dir), seed, profile, sources)

    def get(self, key: str) -> str:
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"missing config key {key!r}") from None

    def int(self, key: str) -> int:
        return self._convert(key, int)

    def float(self, key: str) -> float:
        return self._convert(key, float)

    def bool(self, key: str) -> bool:
        v = self.get(key).lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {v!r}")

    def list(self, key: str, kind=str) -> list:
        items = [s.strip() for s in self.get(key).split(",") if s.strip()]
        if not items:
            raise ConfigError(f"{key}: list must not be empty")
        try:
            return [kind(s) for s in items]
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {self.get(key)!r}") from None

    def path(self, key: str) -> Path:
        p = Path(self.get(key))
        return p if p.is_absolute() else self.out_dir / p

    def _convert(self, key, kind):
        try:
            return kind(self.get(key))
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {self.get(key)!r} as {kind.__name__}") from None
