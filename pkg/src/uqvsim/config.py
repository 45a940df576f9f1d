"""Experiment configuration.

An INI file (``configparser`` syntax). Relative paths resolve against the
directory of the config file. Example::

    [paths]
    corpus = corpus.jsonl
    topics = topics.jsonl
    qrels = qrels.txt
    uqv = uqv.tsv
    output = work
    ; index defaults to <output>/index.bin

    [retrieval]
    model = bm25
    k1 = 0.9
    b = 0.4
    depth = 1000
    session_depth = 100

    [simulation]
    simulators = TTS_S2P, KIS_S2P, TTS_S4
    n_queries = 10
    lambda = 0.4

    [simulator.MY_SIM]
    searcher = TTS
    strategy = S4
    alpha = 2.0
    beta = 0.2
    epsilon = 0.1
    delta = 0.5

    [evaluation]
    measures = nDCG, P@10, AP
    reference = UQV_5
    depths = 10, 20, 50, 100
    gain_levels = 0.3, 0.4, 0.5

Any key can be overridden on the command line with ``--set section.key=value``.
"""

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from uqvsim.measures import parse_measure
from uqvsim.simulate import QCM_PRESETS, QcmParams, SimulatorSpec, Strategy, simulator


class ConfigError(ValueError):
    pass


DEFAULT_QLD_MUS = (50, 250, 500, 1250, 2500, 5000)


def _split(value: str) -> List[str]:
    return [v.strip() for v in value.replace("\n", ",").split(",") if v.strip()]


@dataclass
class ExperimentConfig:
    corpus: Optional[Path] = None
    topics: Optional[Path] = None
    qrels: Optional[Path] = None
    uqv: Optional[Path] = None
    index: Optional[Path] = None
    output: Path = Path("work")

    model: str = "bm25"
    model_params: Dict[str, float] = field(default_factory=dict)
    depth: int = 1000
    session_depth: int = 100

    simulators: List[SimulatorSpec] = field(default_factory=list)

    measures: List[str] = field(default_factory=lambda: ["nDCG", "P@10", "AP"])
    reference: Optional[str] = None
    sources: Optional[List[str]] = None
    depths: List[int] = field(default_factory=lambda: [10, 20, 50, 100])
    session_lengths: List[int] = field(default_factory=lambda: [3, 5, 10])
    gain_levels: List[float] = field(default_factory=lambda: [0.3, 0.4, 0.5])
    max_queries: int = 10
    max_depth: int = 100
    qld_mus: List[float] = field(default_factory=lambda: list(DEFAULT_QLD_MUS))
    sdcg_b: float = 2.0
    sdcg_bq: float = 4.0
    alpha: float = 0.05

    @property
    def index_path(self) -> Path:
        return self.index if self.index is not None else self.output / "index.bin"

    @property
    def simulated_path(self) -> Path:
        return self.output / "simulated.tsv"

    @property
    def runs_dir(self) -> Path:
        return self.output / "runs"

    @property
    def eval_dir(self) -> Path:
        return self.output / "eval"

    def require(self, *names: str, exist: bool = True) -> None:
        """Fail unless the named path settings are set (and exist on disk)."""
        for name in names:
            value = getattr(self, name) if name != "index" else self.index_path
            if value is None:
                raise ConfigError(f"missing required setting paths.{name}")
            if exist and not Path(value).exists():
                raise ConfigError(f"paths.{name}: {value} does not exist")


def _read(parser: configparser.ConfigParser, section: str, key: str, conv=str, default=None):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key).strip()
    if raw == "":
        return default
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from None


def _int_list(raw: str) -> List[int]:
    return [int(v) for v in _split(raw)]


def _float_list(raw: str) -> List[float]:
    return [float(v) for v in _split(raw)]


def _custom_simulator(label: str, sec: configparser.SectionProxy, n_queries: int, lam: float) -> SimulatorSpec:
    searcher = sec.get("searcher", "").strip().upper()
    strategy_raw = sec.get("strategy", "").strip().upper()
    try:
        strategy = Strategy(strategy_raw)
    except ValueError:
        raise ConfigError(f"simulator.{label}: unknown strategy {strategy_raw!r}") from None
    overrides = {"lam": float(sec.get("lambda", lam))}
    if strategy.is_qcm:
        base = QCM_PRESETS[strategy]
        m_raw = sec.get("m", "").strip()
        overrides["params"] = QcmParams(
            alpha=float(sec.get("alpha", base.alpha)),
            beta=float(sec.get("beta", base.beta)),
            epsilon=float(sec.get("epsilon", base.epsilon)),
            delta=float(sec.get("delta", base.delta)),
            ngram_sizes=tuple(_int_list(sec.get("ngram_sizes", "3,4,5"))),
            m=int(m_raw) if m_raw else None,
        )
    if "k" in sec:
        overrides["k"] = int(sec["k"])
    spec = simulator(f"{searcher}_{strategy.value}", n_queries=int(sec.get("n_queries", n_queries)), **overrides)
    return SimulatorSpec(
        label=label, source=spec.source, strategy=spec.strategy, n_queries=spec.n_queries,
        k=spec.k, params=spec.params, lam=spec.lam,
    )


def load_config(path=None, overrides: Sequence[str] = (), output: Optional[str] = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = path.resolve().parent
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().rpartition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, option, value.strip())

    known = {"paths", "retrieval", "simulation", "evaluation"}
    for section in parser.sections():
        if section not in known and not section.startswith("simulator."):
            raise ConfigError(f"unknown config section [{section}]")

    def p(key):
        raw = _read(parser, "paths", key)
        if raw is None:
            return None
        pth = Path(os.path.expanduser(raw))
        return pth if pth.is_absolute() else base / pth

    try:
        return _build(parser, p, output)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _build(parser, p, output) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.corpus, cfg.topics, cfg.qrels, cfg.uqv, cfg.index = (
        p("corpus"), p("topics"), p("qrels"), p("uqv"), p("index"))
    if output is not None:
        cfg.output = Path(output)
    elif p("output") is not None:
        cfg.output = p("output")

    cfg.model = _read(parser, "retrieval", "model", str, "bm25").lower()
    if cfg.model == "bm25":
        cfg.model_params = {
            "k1": _read(parser, "retrieval", "k1", float, 0.9),
            "b": _read(parser, "retrieval", "b", float, 0.4),
        }
    elif cfg.model == "qld":
        cfg.model_params = {"mu": _read(parser, "retrieval", "mu", float, 1000.0)}
    else:
        raise ConfigError(f"retrieval.model: unknown model {cfg.model!r}")
    cfg.depth = _read(parser, "retrieval", "depth", int, 1000)
    cfg.session_depth = _read(parser, "retrieval", "session_depth", int, 100)
    if cfg.depth < 1 or cfg.session_depth < 1:
        raise ConfigError("retrieval.depth and retrieval.session_depth must be >= 1")

    n_queries = _read(parser, "simulation", "n_queries", int, 10)
    lam = _read(parser, "simulation", "lambda", float, 0.4)
    labels = _split(_read(parser, "simulation", "simulators", str, "") or "")
    if len(set(labels)) != len(labels):
        raise ConfigError(f"simulation.simulators: duplicate labels in {labels}")
    custom = {s[len("simulator."):]: parser[s] for s in parser.sections() if s.startswith("simulator.")}
    for label in custom:
        if label in labels:
            raise ConfigError(f"simulator label {label!r} defined twice")
    specs = []
    for label in labels:
        try:
            specs.append(simulator(label, n_queries=n_queries, lam=lam))
        except ValueError:
            raise ConfigError(f"simulation.simulators: unknown simulator {label!r}") from None
    for label, sec in custom.items():
        specs.append(_custom_simulator(label, sec, n_queries, lam))
    cfg.simulators = specs

    ev = "evaluation"
    cfg.measures = _split(_read(parser, ev, "measures", str, "nDCG, P@10, AP"))
    for m in cfg.measures:
        try:
            mid = parse_measure(m)
        except ValueError:
            raise ConfigError(f"evaluation.measures: unknown measure {m!r}") from None
        if mid.kind == "SDCG":
            raise ConfigError("evaluation.measures: sDCG is configured with sdcg_b / sdcg_bq")
    cfg.reference = _read(parser, ev, "reference", str, None)
    sources = _read(parser, ev, "sources", str, None)
    cfg.sources = _split(sources) if sources else None
    cfg.depths = _read(parser, ev, "depths", _int_list, cfg.depths)
    cfg.session_lengths = _read(parser, ev, "session_lengths", _int_list, cfg.session_lengths)
    cfg.gain_levels = _read(parser, ev, "gain_levels", _float_list, cfg.gain_levels)
    cfg.max_queries = _read(parser, ev, "max_queries", int, cfg.max_queries)
    cfg.max_depth = _read(parser, ev, "max_depth", int, cfg.max_depth)
    cfg.qld_mus = _read(parser, ev, "qld_mu", _float_list, cfg.qld_mus)
    cfg.sdcg_b = _read(parser, ev, "sdcg_b", float, cfg.sdcg_b)
    cfg.sdcg_bq = _read(parser, ev, "sdcg_bq", float, cfg.sdcg_bq)
    cfg.alpha = _read(parser, ev, "alpha", float, cfg.alpha)
    if any(d < 1 for d in cfg.depths + cfg.session_lengths) or cfg.max_queries < 1 or cfg.max_depth < 1:
        raise ConfigError("evaluation depths, session lengths, max_queries and max_depth must be >= 1")
    if any(not 0 < g < 1 for g in cfg.gain_levels):
        raise ConfigError("evaluation.gain_levels must lie in (0, 1)")
    if len(cfg.qld_mus) < 2 or any(mu <= 0 for mu in cfg.qld_mus):
        raise ConfigError("evaluation.qld_mu needs at least two positive values")
    if not (cfg.sdcg_b > 1 and cfg.sdcg_bq > 1):
        raise ConfigError("evaluation.sdcg_b and sdcg_bq must be > 1")
    return cfg
