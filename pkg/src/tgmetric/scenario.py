"""Scenario files: a single chart, (g, H), a Dirac frame and optional extras.

Scenario files are TOML.  Component keys name coordinates either joined by
commas (``"x,y"``) or, when every coordinate is a single character, run
together (``xy``).  Only the upper triangle of ``g`` and increasing index
triples of ``H``/``flattening_B`` are accepted; omitted components are zero.

Example::

    name = "s2_twisted"

    [chart]
    coords = ["x", "y", "z"]
    box = [[-1, 1], [-1, 1], [-1, 1]]
    # excluded = "x^2 + y^2 - 0.25"     # optional; points with value <= 0 are skipped

    [g]
    xx = "1"
    yy = "1"
    zz = "1"

    [H]
    xyz = "2"

    [[dirac_frame]]
    X = ["0", "0", "1"]
    alpha = ["0", "2*x", "0"]

    [quotient]                          # optional
    leaf_coords = ["z"]
    flattening_B = { yz = "2*x" }

    [loop]                              # optional; expressions in sigma
    x = ["cos(sigma)", "sin(sigma)", "0"]

    [tolerances]                        # optional
    pass = 1e-9
    fail = 1e-6

    [sample]                            # optional
    count = 100
    seed = 0
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .courant import CourantData, GeneralizedSection
from .dirac import DiracFrame
from .expr import ExpressionError
from .fields import Chart, ScalarField, TensorField, parse_scalar


class ScenarioError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.key_path = path


@dataclass(frozen=True)
class SampleConfig:
    count: int = 100
    seed: int = 0


@dataclass(frozen=True)
class Tolerances:
    pass_: float = 1e-9
    fail: float = 1e-6


@dataclass(frozen=True)
class Scenario:
    name: str
    chart: Chart
    data: CourantData
    frame: DiracFrame
    leaf_coords: tuple[str, ...] | None = None
    flattening_B: TensorField | None = None
    loop: tuple[str, ...] | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    sample: SampleConfig = field(default_factory=SampleConfig)
    source: dict = field(default_factory=dict, repr=False)

    def points(self, count: int | None = None, seed: int | None = None):
        return self.chart.sample(count or self.sample.count, self.sample.seed if seed is None else seed)

    @property
    def loop_chart(self) -> Chart:
        return Chart(("sigma",), ((0.0, 6.283185307179586),))

    def loop_fields(self) -> list[ScalarField]:
        if self.loop is None:
            raise ScenarioError("loop", "scenario has no [loop] section")
        return [parse_scalar(t, self.loop_chart) for t in self.loop]


_TOP = {"name", "chart", "g", "H", "dirac_frame", "quotient", "loop", "tolerances", "sample", "description"}


def _split_key(key: str, coords: tuple[str, ...], path: str) -> tuple[int, ...]:
    if "," in key:
        names = [s.strip() for s in key.split(",")]
    elif all(len(c) == 1 for c in coords):
        names = list(key)
    else:
        raise ScenarioError(path, "component keys must separate coordinates with commas")
    try:
        return tuple(coords.index(nm) for nm in names)
    except ValueError:
        raise ScenarioError(path, f"unknown coordinate in component key {key!r}") from None


def _expr(text, chart: Chart, path: str) -> ScalarField:
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = repr(float(text))
    if not isinstance(text, str):
        raise ScenarioError(path, "expected an expression string")
    try:
        return parse_scalar(text, chart)
    except ExpressionError as exc:
        raise ScenarioError(path, str(exc)) from exc


def _components(table, chart: Chart, valence: str, path: str) -> TensorField:
    if not isinstance(table, dict):
        raise ScenarioError(path, "expected a table of components")
    n = chart.dim
    order = {"symbilinear": 2, "twoform": 2, "threeform": 3}[valence]
    values = {}
    for key, text in table.items():
        idx = _split_key(key, chart.coord_names, f"{path}.{key}")
        if len(idx) != order:
            raise ScenarioError(f"{path}.{key}", f"expected {order} indices")
        strict = valence != "symbilinear"
        ok = all(a < b for a, b in zip(idx, idx[1:])) if strict else all(a <= b for a, b in zip(idx, idx[1:]))
        if not ok:
            what = "upper triangle" if valence == "symbilinear" else "strictly increasing indices"
            raise ScenarioError(f"{path}.{key}", f"only the {what} is accepted")
        if idx in values:
            raise ScenarioError(f"{path}.{key}", "duplicate component")
        values[idx] = _expr(text, chart, f"{path}.{key}")
    zero = ScalarField.const(0.0, chart)
    return TensorField.from_function(chart, valence, lambda *i: values.get(i, zero))


def _vector(items, chart: Chart, valence: str, path: str) -> TensorField:
    if not isinstance(items, list) or len(items) != chart.dim:
        raise ScenarioError(path, f"expected a list of {chart.dim} expressions")
    return TensorField(chart, valence, tuple(_expr(t, chart, f"{path}[{i}]") for i, t in enumerate(items)))


def _check_keys(table: dict, allowed: set, path: str):
    extra = set(table) - allowed
    if extra:
        raise ScenarioError(f"{path}.{sorted(extra)[0]}" if path else sorted(extra)[0], "unknown key")


def scenario_from_dict(raw: dict) -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("", "scenario must be a table")
    if "charts" in raw or isinstance(raw.get("chart"), list):
        raise ScenarioError("chart", "multi-chart scenarios are not supported; give a single [chart]")
    _check_keys(raw, _TOP, "")
    for req in ("name", "chart", "g", "dirac_frame"):
        if req not in raw:
            raise ScenarioError(req, "missing required key")
    name = raw["name"]
    if not isinstance(name, str):
        raise ScenarioError("name", "expected a string")

    craw = raw["chart"]
    if not isinstance(craw, dict):
        raise ScenarioError("chart", "expected a table")
    _check_keys(craw, {"coords", "box", "excluded"}, "chart")
    try:
        chart = Chart(tuple(craw["coords"]), tuple(tuple(b) for b in craw["box"]), craw.get("excluded"))
    except KeyError as exc:
        raise ScenarioError(f"chart.{exc.args[0]}", "missing required key") from None
    except (ValueError, TypeError) as exc:
        raise ScenarioError("chart", str(exc)) from exc

    g = _components(raw["g"], chart, "symbilinear", "g")
    H = _components(raw.get("H", {}), chart, "threeform", "H") if chart.dim >= 3 else \
        TensorField.zero(chart, "threeform")
    data = CourantData(chart, g, H)

    frames = raw["dirac_frame"]
    if not isinstance(frames, list) or not frames:
        raise ScenarioError("dirac_frame", "expected a non-empty array of sections")
    sections = []
    for a, sec in enumerate(frames):
        path = f"dirac_frame[{a}]"
        if not isinstance(sec, dict):
            raise ScenarioError(path, "expected a table with X and alpha")
        _check_keys(sec, {"X", "alpha"}, path)
        X = _vector(sec.get("X", ["0"] * chart.dim), chart, "vector", f"{path}.X")
        al = _vector(sec.get("alpha", ["0"] * chart.dim), chart, "oneform", f"{path}.alpha")
        sections.append(GeneralizedSection(X, al))
    try:
        frame = DiracFrame(data, tuple(sections))
    except ValueError as exc:
        raise ScenarioError("dirac_frame", str(exc)) from exc

    leaf = B = None
    if "quotient" in raw:
        q = raw["quotient"]
        _check_keys(q, {"leaf_coords", "flattening_B"}, "quotient")
        leaf = tuple(q.get("leaf_coords", chart.coord_names[chart.dim - frame.k:]))
        for c in leaf:
            if c not in chart.coord_names:
                raise ScenarioError("quotient.leaf_coords", f"unknown coordinate {c!r}")
        if "flattening_B" in q:
            B = _components(q["flattening_B"], chart, "twoform", "quotient.flattening_B")

    loop = None
    if "loop" in raw:
        lraw = raw["loop"]
        _check_keys(lraw, {"x"}, "loop")
        xs = lraw.get("x")
        if not isinstance(xs, list) or len(xs) != chart.dim:
            raise ScenarioError("loop.x", f"expected {chart.dim} expressions in sigma")
        lc = Chart(("sigma",), ((0.0, 1.0),))
        for i, t in enumerate(xs):
            _expr(t, lc, f"loop.x[{i}]")
        loop = tuple(str(t) for t in xs)

    tol = raw.get("tolerances", {})
    _check_keys(tol, {"pass", "fail"}, "tolerances")
    tolerances = Tolerances(float(tol.get("pass", 1e-9)), float(tol.get("fail", 1e-6)))
    if not tolerances.pass_ < tolerances.fail:
        raise ScenarioError("tolerances", "pass tolerance must be below the fail threshold")
    smp = raw.get("sample", {})
    _check_keys(smp, {"count", "seed"}, "sample")
    sample = SampleConfig(int(smp.get("count", 100)), int(smp.get("seed", 0)))

    return Scenario(name, chart, data, frame, leaf, B, loop, tolerances, sample, raw)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        raw = tomli.loads(path.read_text(encoding="utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError("", f"malformed scenario file: {exc}") from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise ScenarioError("", f"cannot read {path}: {exc}") from exc
    return scenario_from_dict(raw)


def corpus_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def bundled(name: str) -> Scenario:
    return load_scenario(corpus_dir() / f"{name}.scn")
