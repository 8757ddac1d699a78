"""
Run configuration: one frozen dataclass per config file section.

Precedence is command line flags over file values over the defaults
declared here.
"""
import os
import configparser
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from arcsim.schema import SectionModel, InvalidConfig, nearest

OUTPUT_ROOT_VARIABLE = "ARCSIM_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "arcsim-output"


@dataclass(eq=True, frozen=True)
class Run:
    seed: int = 1234
    output_dir: str = ""
    threads: str = "1"
    block_size: int = 1024
    dump_trajectories: bool = False


@dataclass(eq=True, frozen=True)
class Potential:
    family: str = "quadratic"
    dimension: int = 2
    m0: float = 2.0
    a: float = 0.0


@dataclass(eq=True, frozen=True)
class DatasetSection:
    kind: str = "sphere"
    n: int = 64
    radius: float = 1.0
    sigma: float = 1.0
    location: Tuple[float, ...] = ()
    file: str = ""


@dataclass(eq=True, frozen=True)
class Calibration:
    m: float = 1.0
    b: float = 1.0
    M: float = 2.0
    beta: float = 1.0
    d: int = 2
    grid_points: int = 4096
    tolerance: float = 1e-10
    probes: int = 10000


@dataclass(eq=True, frozen=True)
class Simulate:
    driver: str = "continuous-langevin"
    coupling: str = "arc"
    epsilon: float = 0.0
    eta: float = 0.01
    batch_size: int = 0
    horizon: float = 1.0
    dt: float = 0.01
    x0: Tuple[float, ...] = (1.0, 0.0)
    y0: Tuple[float, ...] = (-1.0, 0.0)
    ensemble: int = 1
    record_stride: int = 1


@dataclass(eq=True, frozen=True)
class Experiment:
    ensemble: int = 1000
    horizon: float = 2.0
    dt: float = 0.01
    record_points: int = 50
    x0: Tuple[float, ...] = (1.0, 0.0)
    y0: Tuple[float, ...] = (-1.0, 0.0)
    initial_scale: float = 0.0
    epsilon: float = 0.0
    etas: Tuple[float, ...] = (0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625, 0.001953125)
    t_final: float = 1.0
    substeps: int = 8
    batch_sizes: Tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64)
    eta: float = 0.0625
    ns: Tuple[int, ...] = (16, 32, 64, 128, 256)
    replicas: int = 20
    population_size: int = 4096
    epsilons: Tuple[float, ...] = (0.08, 0.04, 0.02, 0.01)
    deltas: Tuple[float, ...] = (0.1, 0.2, 0.5, 1.0)
    burn_in: float = 0.0
    burn_in_check: bool = True
    observable: str = "mean"
    record_every: int = 10


@dataclass(eq=True, frozen=True)
class Verify:
    ensemble: int = 2000
    times: Tuple[float, ...] = (0.5, 1.0, 2.0, 5.0, 10.0)
    dt: float = 0.01
    eta: float = 0.05
    batch_size: int = 8
    ou_steps: int = 50
    one_step_t: float = 0.5
    variance_max_n: int = 12
    variance_points: int = 100
    certificate_probes: int = 10000


SECTIONS = {
    "run": SectionModel(Run, "run"),
    "potential": SectionModel(Potential, "potential"),
    "dataset": SectionModel(DatasetSection, "dataset"),
    "calibration": SectionModel(Calibration, "calibration"),
    "simulate": SectionModel(Simulate, "simulate"),
    "experiment": SectionModel(Experiment, "experiment"),
    "verify": SectionModel(Verify, "verify"),
}


@dataclass(eq=True, frozen=True)
class RunConfig:
    run: Run = field(default_factory=Run)
    potential: Potential = field(default_factory=Potential)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    calibration: Calibration = field(default_factory=Calibration)
    simulate: Simulate = field(default_factory=Simulate)
    experiment: Experiment = field(default_factory=Experiment)
    verify: Verify = field(default_factory=Verify)

    @property
    def output_dir(self) -> str:
        if self.run.output_dir:
            return self.run.output_dir
        return os.environ.get(OUTPUT_ROOT_VARIABLE, DEFAULT_OUTPUT_ROOT)

    @property
    def threads(self) -> int:
        if self.run.threads.strip().lower() == "auto":
            return os.cpu_count() or 1
        try:
            threads = int(self.run.threads)
        except ValueError:
            raise InvalidConfig(f"run.threads must be a count or 'auto', got {self.run.threads!r}")
        if threads < 1:
            raise InvalidConfig(f"run.threads must be positive, got {threads}")
        return threads

    def to_kv(self) -> str:
        """The effective config in the file dialect it was read from"""
        lines = []
        for name, model in SECTIONS.items():
            lines.append(f"[{name}]")
            lines.extend(f"{key} = {value}" for key, value in model.dump(getattr(self, name)).items())
            lines.append("")
        return "\n".join(lines)

    def write(self, filename: str):
        with open(filename, 'w', encoding='utf-8') as file:
            file.write(self.to_kv())


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    # keys are case sensitive: calibration.M and calibration.m differ
    parser.optionxform = str
    return parser


def parse_overrides(assignments: List[str]) -> Dict[str, Dict[str, str]]:
    """Turn section.key=value strings into nested dictionaries

    >>> parse_overrides(["experiment.ensemble=200", "run.seed = 7"])
    {'experiment': {'ensemble': '200'}, 'run': {'seed': '7'}}
    """
    overrides: Dict[str, Dict[str, str]] = {}
    for assignment in assignments:
        target, separator, value = assignment.partition("=")
        section, dot, key = target.strip().partition(".")
        if not separator or not dot or not key:
            raise InvalidConfig(f"Overrides take the form section.key=value, got {assignment!r}")
        overrides.setdefault(section, {})[key.strip()] = value.strip()
    return overrides


def parse_config(text: str = "", overrides: Optional[Dict[str, Dict[str, str]]] = None) -> RunConfig:
    """Merge a config document and overrides onto the defaults.

    >>> parse_config("").run.seed
    1234
    >>> parse_config("[experiment]\\nensemble = 50", {"run": {"seed": "9"}}).run.seed
    9
    """
    parser = _parser()
    try:
        parser.read_string(text)
    except configparser.Error as error:
        raise InvalidConfig(f"Malformed config file: {error}")

    sections = {name: dict(parser[name]) for name in parser.sections()}
    for section, values in (overrides or {}).items():
        sections.setdefault(section, {}).update(values)

    config = RunConfig()
    for section, values in sections.items():
        if section not in SECTIONS:
            raise InvalidConfig(f"Unknown section [{section}], "
                                f"did you mean [{nearest(section, SECTIONS)}]?")
        model = SECTIONS[section]
        config = replace(config, **{section: model.load(values, getattr(config, section))})
    return config


def load_config(filename: Optional[str], overrides: Optional[Dict[str, Dict[str, str]]] = None) -> RunConfig:
    text = ""
    if filename is not None:
        with open(filename, 'r', encoding='utf-8') as file:
            text = file.read()
    return parse_config(text, overrides)
