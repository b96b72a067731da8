"""Pipeline configuration: shipped defaults and the INI-style config file.

Sections: [thresholds.general], [thresholds.<lesion>], [refine], [qc],
[negatives]. File values override defaults; CLI flags override the file.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .core import LesionType, ThresholdSet
from .grounding import RefineConfig

# Shipped grounding thresholds. Edema spreads widely through the lungs and
# gets looser anomaly/confidence cutoffs; every other lesion uses the general
# column.
GENERAL_THRESHOLDS = ThresholdSet(
    tau_ano=0.10, tau_anatomy=0.25, tau_conf=0.20, tau_signal=0.20, tau_size=0.10
)
EDEMA_THRESHOLDS = ThresholdSet(
    tau_ano=0.01, tau_anatomy=0.25, tau_conf=0.01, tau_signal=0.20, tau_size=0.10
)


@dataclass(frozen=True)
class QcConfig:
    rel_tol: float = 0.05
    ctr_max: float = 0.45


@dataclass(frozen=True)
class NegativesConfig:
    seed: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    thresholds: dict[LesionType, ThresholdSet] = field(default_factory=dict)
    general_thresholds: ThresholdSet = GENERAL_THRESHOLDS
    refine: RefineConfig = field(default_factory=RefineConfig)
    qc: QcConfig = field(default_factory=QcConfig)
    negatives: NegativesConfig = field(default_factory=NegativesConfig)

    def thresholds_for(self, lesion: LesionType) -> ThresholdSet:
        return self.thresholds.get(lesion, self.general_thresholds)


def default_config() -> PipelineConfig:
    return PipelineConfig(thresholds={LesionType.EDEMA: EDEMA_THRESHOLDS})


_THRESHOLD_FIELDS = ("tau_ano", "tau_anatomy", "tau_conf", "tau_signal", "tau_size")


def load_config(path: str | Path | None = None) -> PipelineConfig:
    cfg = default_config()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")

    thresholds = dict(cfg.thresholds)
    general = cfg.general_thresholds
    for section in parser.sections():
        if not section.startswith("thresholds."):
            continue
        name = section.split(".", 1)[1]
        base = general if name == "general" else thresholds.get(
            LesionType(name), general
        )
        values = {
            f: parser.getfloat(section, f, fallback=getattr(base, f))
            for f in _THRESHOLD_FIELDS
        }
        ts = ThresholdSet(**values)
        if name == "general":
            general = ts
        else:
            thresholds[LesionType(name)] = ts

    refine = cfg.refine
    if parser.has_section("refine"):
        refine = RefineConfig(
            noise_iterations=parser.getint("refine", "noise_iterations", fallback=refine.noise_iterations),
            min_area_fraction=parser.getfloat("refine", "min_area_fraction", fallback=refine.min_area_fraction),
            intensity_delta=parser.getfloat("refine", "intensity_delta", fallback=refine.intensity_delta),
            max_rounds=parser.getint("refine", "max_rounds", fallback=refine.max_rounds),
            base_fraction=parser.getfloat("refine", "base_fraction", fallback=refine.base_fraction),
        )

    qc = cfg.qc
    if parser.has_section("qc"):
        qc = QcConfig(
            rel_tol=parser.getfloat("qc", "rel_tol", fallback=qc.rel_tol),
            ctr_max=parser.getfloat("qc", "ctr_max", fallback=qc.ctr_max),
        )

    negatives = cfg.negatives
    if parser.has_section("negatives"):
        negatives = NegativesConfig(
            seed=parser.getint("negatives", "seed", fallback=negatives.seed)
        )

    return PipelineConfig(
        thresholds=thresholds,
        general_thresholds=general,
        refine=refine,
        qc=qc,
        negatives=negatives,
    )


def dump_config(cfg: PipelineConfig) -> str:
    """Render the effective configuration in the config-file format."""
    parser = configparser.ConfigParser()
    parser["thresholds.general"] = {
        f: repr(getattr(cfg.general_thresholds, f)) for f in _THRESHOLD_FIELDS
    }
    for lesion, ts in sorted(cfg.thresholds.items(), key=lambda kv: kv[0].value):
        parser[f"thresholds.{lesion.value}"] = {
            f: repr(getattr(ts, f)) for f in _THRESHOLD_FIELDS
        }
    parser["refine"] = {
        f.name: repr(getattr(cfg.refine, f.name))
        for f in dataclasses.fields(RefineConfig)
    }
    parser["qc"] = {"rel_tol": repr(cfg.qc.rel_tol), "ctr_max": repr(cfg.qc.ctr_max)}
    parser["negatives"] = {"seed": repr(cfg.negatives.seed)}
    import io

    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_to_dict(cfg: PipelineConfig) -> dict:
    return {
        "general_thresholds": dataclasses.asdict(cfg.general_thresholds),
        "thresholds": {
            l.value: dataclasses.asdict(ts) for l, ts in cfg.thresholds.items()
        },
        "refine": dataclasses.asdict(cfg.refine),
        "qc": dataclasses.asdict(cfg.qc),
        "negatives": dataclasses.asdict(cfg.negatives),
    }


def config_from_dict(d: dict) -> PipelineConfig:
    return PipelineConfig(
        general_thresholds=ThresholdSet(**d["general_thresholds"]),
        thresholds={
            LesionType(k): ThresholdSet(**v) for k, v in d["thresholds"].items()
        },
        refine=RefineConfig(**d["refine"]),
        qc=QcConfig(**d["qc"]),
        negatives=NegativesConfig(**d["negatives"]),
    )
