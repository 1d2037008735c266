"""Flat key = value run configuration.

Every tunable constant in the system lives here with an explicit default;
unknown keys are rejected so a typo cannot silently fall back.  The file
format is diff-friendly UTF-8 text: one `key = value` per line, `#`
comments allowed.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError


@dataclass
class RunConfig:
    seed: int = 0

    # corpus
    min_count: int = 5
    max_len: int = 20
    strip_plural_s: bool = False

    # language model
    word_dim: int = 200
    hidden: int = 200
    embed_dim: int = 256
    margin: float = 0.5
    lambda_t: float = 0.1
    batch: int = 64
    lr_enc: float = 1e-4
    lr_dec: float = 1e-3
    lm_epochs: int = 60

    # alignment
    K: int = 10
    lambda_ce: float = 1.0
    lambda_r: float = 1.0
    lambda_adv: float = 0.1
    gp_coeff: float = 10.0
    critic_steps: int = 5
    translator_hidden: int = 512
    critic_hidden: int = 256
    lr_align: float = 1e-3
    align_epochs: int = 30
    align_batch: int = 64
    feature_dim: int = 2048
    ablation: str = "joint-adv"
    conventional_polarity: bool = False

    # inference
    beam: int = 3
    caption_max_len: int = 20
    suppress_unk: bool = True
    beam_length_normalize: bool = False

    # diagnostics
    mixing_k: int = 10

    # synthetic world
    synth_images: int = 150
    synth_sentences: int = 500
    synth_concepts: int = 30
    synth_noise: float = 0.1
    synth_cooccurrence: float = 1.0
    synth_probe_cooccurrence: float = -1.0  # negative means "same as synth_cooccurrence"
    synth_detector_noise: float = 0.0
    synth_synonyms: int = 3
    synth_cluster_arity: int = 3
    synth_backgrounds: int = 8
    synth_bg_rate: float = 0.7

    def lines(self) -> list[str]:
        return [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]


def _coerce(name: str, raw: str, default) -> object:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key '{name}': cannot parse value {raw!r}") from exc


def parse_config(path) -> RunConfig:
    cfg = RunConfig()
    known = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
            setattr(cfg, key, _coerce(key, value, known[key]))
    return cfg


def write_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in cfg.lines():
            fh.write(line + "\n")
