"""Run configuration read from an INI file.

Sections and keys (all optional)::

    [run]        graph, data, infected, out, seed
    [model]      lam, mu, beta, gamma, alpha, sigma, source, population,
                 infected0, t_end, dt, record_every
    [calibrate]  population, lam, alpha, beta, gamma, sigma, mu (initial guess),
                 chains, warmup, draws, hdi_mass
    [window]     t_w, q, horizons (comma separated)
    [forecaster] kind (block | ridge), blocks, hidden (comma separated), epochs,
                 learning_rate, momentum, batch_size, clip_norm (none disables),
                 ridge
    [synth]      n, T, period, ar, sd, seasonal_amplitude, n_sources,
                 initial_infected, extra_edges, beta, gamma, alpha, sigma, mu, lam
    [conformal]  level

Command-line flags override the matching ``[run]``/``[window]`` keys.
No environment variables are consulted.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .forecast import BlockConfig
from .mnsir import DISEASE_FREE_PARAMS, MnSirParams


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


@dataclass
class RunConfig:
    sections: dict = field(default_factory=dict)
    text: str = ""

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        if path is None:
            return cls()
        text = Path(path).read_text()
        return cls.parse(text)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        sections = {s: dict(cp[s]) for s in cp.sections()}
        return cls(sections, text)

    def get(self, section: str, key: str, default=None):
        # configparser folds option names to lower case
        return self.sections.get(section, {}).get(key.lower(), default)

    def set(self, section: str, key: str, value) -> None:
        if value is not None:
            self.sections.setdefault(section, {})[key.lower()] = str(value)

    def getfloat(self, section, key, default):
        v = self.get(section, key)
        return float(v) if v is not None else default

    def getint(self, section, key, default):
        v = self.get(section, key)
        return int(v) if v is not None else default

    def hash(self) -> str:
        canon = "\n".join(f"[{s}]" + "".join(f"\n{k}={v}" for k, v in sorted(kv.items()))
                          for s, kv in sorted(self.sections.items()))
        return hashlib.sha256(canon.encode()).hexdigest()

    # -- typed views
    def model_params(self) -> MnSirParams:
        base = DISEASE_FREE_PARAMS.as_dict()
        for k in base:
            base[k] = self.getfloat("model", k, base[k])
        return MnSirParams(**base)

    def block_config(self, seed: int) -> BlockConfig:
        d = BlockConfig()
        hidden = self.get("forecaster", "hidden")
        batch = self.get("forecaster", "batch_size")
        clip = self.get("forecaster", "clip_norm")
        return BlockConfig(
            blocks=self.getint("forecaster", "blocks", d.blocks),
            hidden=_ints(hidden) if hidden else d.hidden,
            epochs=self.getint("forecaster", "epochs", d.epochs),
            learning_rate=self.getfloat("forecaster", "learning_rate", d.learning_rate),
            momentum=self.getfloat("forecaster", "momentum", d.momentum),
            batch_size=int(batch) if batch else None,
            clip_norm=d.clip_norm if clip is None else
            (None if clip.strip().lower() == "none" else float(clip)),
            seed=seed,
        )

    def horizons(self) -> tuple[int, ...]:
        h = self.get("window", "horizons")
        return _ints(h) if h else (3, 6, 9, 12)
