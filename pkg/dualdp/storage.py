"""
File IO: instance files, extensive LP files and CSV outputs.

Instance files are INI-style. Vectors are whitespace-separated floats, matrices
are rows separated by ';', cost functions are pieces "g1 g2 ... | offset"
separated by ';', and row senses are tokens `eq` / `geq`. See README.md for the
full grammar.
"""
import configparser
import re
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import sparse

from dualdp.app_log_config import logger
from dualdp.models.problem_model import (
    PiecewiseLinearCost,
    Scenario,
    StageBlock,
    StationaryInstance,
    TwoStageLowerLevel,
    build_instance,
)
from dualdp.schemas.schemas import IterationRecord, TRACE_COLUMNS, HDDP_COLUMNS
from dualdp.services.exceptions import DimensionError, ParseError
from dualdp.services.lp_solver import LpProblem


FLOAT_FORMAT = "%.17g"
_SPLIT = re.compile(r"[\s,]+")


# --- value codecs ---

def _floats(text: str, key: str) -> np.ndarray:
    tokens = [t for t in _SPLIT.split(text.strip()) if t]
    try:
        return np.array([float(t) for t in tokens], dtype=float)
    except ValueError as exc:
        raise ParseError(f"'{key}': {exc}") from exc


def parse_vector(text: str, key: str = "vector") -> np.ndarray:
    return _floats(text, key)


def parse_matrix(text: str, cols: int, key: str = "matrix") -> np.ndarray:
    rows = [r for r in text.split(";") if r.strip()]
    if not rows:
        return np.zeros((0, cols))
    parsed = [_floats(r, key) for r in rows]
    if any(r.size != cols for r in parsed):
        raise DimensionError(f"'{key}': every row needs {cols} entries")
    return np.vstack(parsed)


def parse_senses(text: str, rows: int, key: str = "rows") -> np.ndarray:
    tokens = [t.lower() for t in _SPLIT.split(text.strip()) if t]
    mapping = {"eq": True, "=": True, "geq": False, ">=": False}
    try:
        senses = np.array([mapping[t] for t in tokens], dtype=bool)
    except KeyError as exc:
        raise ParseError(f"'{key}': unknown row sense {exc}") from exc
    if senses.size != rows:
        raise DimensionError(f"'{key}': {senses.size} senses for {rows} rows")
    return senses


def parse_cost(text: str, dim: int, key: str = "cost") -> PiecewiseLinearCost:
    gradients, offsets = [], []
    for piece in (p for p in text.split(";") if p.strip()):
        if "|" not in piece:
            raise ParseError(f"'{key}': piece '{piece.strip()}' lacks the '| offset' part")
        grad_text, offset_text = piece.split("|", 1)
        gradient = _floats(grad_text, key)
        if gradient.size != dim:
            raise DimensionError(f"'{key}': gradient has {gradient.size} entries, expected {dim}")
        gradients.append(gradient)
        offsets.append(float(_floats(offset_text, key)[0]))
    if not gradients:
        raise ParseError(f"'{key}': no cost pieces")
    return PiecewiseLinearCost(np.vstack(gradients), np.array(offsets))


def format_vector(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values, dtype=float).ravel())


def format_matrix(matrix) -> str:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    return " ; ".join(format_vector(row) for row in matrix)


def format_senses(is_equality) -> str:
    return " ".join("eq" if e else "geq" for e in np.asarray(is_equality, dtype=bool))


def format_cost(cost: PiecewiseLinearCost) -> str:
    return " ; ".join(f"{format_vector(g)} | {float(o)!r}" for g, o in zip(cost.gradients, cost.offsets))


# --- instance files ---

def _read_parser(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"instance file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return parser


def _require(section, key: str) -> str:
    if key not in section:
        raise ParseError(f"[{section.name}] is missing '{key}'")
    return section[key]


def _scenario_from(section, n: int) -> Scenario:
    b = parse_vector(section.get("b", ""), "b")
    m = b.size
    local_cost = parse_vector(section.get("local_cost", ""), "local_cost")
    p = local_cost.size
    r = parse_vector(section.get("r", ""), "r")
    try:
        return Scenario(
            A=parse_matrix(section.get("A", ""), n, "A") if m else np.zeros((0, n)),
            B=parse_matrix(section.get("B", ""), n, "B") if m else np.zeros((0, n)),
            b=b,
            is_equality=parse_senses(section.get("rows", ""), m),
            cost=parse_cost(_require(section, "cost"), n),
            Q=parse_matrix(section.get("Q", ""), n, "Q") if r.size else None,
            R=parse_matrix(section.get("R", ""), n, "R") if r.size else None,
            r=r if r.size else None,
            E=parse_matrix(section.get("E", ""), p, "E") if p else None,
            local_cost=local_cost if p else None,
            local_lower=parse_vector(section.get("local_lower", ""), "local_lower") if p else None,
            local_upper=parse_vector(section.get("local_upper", ""), "local_upper") if p else None,
        )
    except (ValueError, IndexError) as exc:
        raise ParseError(f"[{section.name}]: {exc}") from exc


def _instance_from(parser: configparser.ConfigParser, default_name: str) -> StationaryInstance:
    if "instance" not in parser:
        raise ParseError("missing [instance] section")
    head = parser["instance"]
    try:
        n = int(_require(head, "n"))
        discount = float(_require(head, "discount"))
        N = int(_require(head, "scenarios"))
    except ValueError as exc:
        raise ParseError(f"[instance]: {exc}") from exc

    def box(key):
        values = parse_vector(_require(head, key), key)
        if values.size == 1 and n > 1:
            values = np.full(n, values[0])
        if values.size != n:
            raise DimensionError(f"[instance] '{key}' has {values.size} entries, expected {n}")
        return values

    sections = []
    for index in range(N + 1):
        name = f"scenario {index}"
        if name not in parser:
            raise ParseError(f"missing [{name}] section")
        sections.append(_scenario_from(parser[name], n))
    try:
        return build_instance(box("lower"), box("upper"), box("x0"), sections[0], sections[1:],
                              discount, name=head.get("name", default_name))
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def read_instance(path) -> StationaryInstance:
    return _instance_from(_read_parser(path), Path(path).stem)


def _write_scenario(parser, name: str, scenario: Scenario) -> None:
    section = {
        "A": format_matrix(scenario.A) if scenario.m else "",
        "B": format_matrix(scenario.B) if scenario.m else "",
        "b": format_vector(scenario.b),
        "rows": format_senses(scenario.is_equality),
        "cost": format_cost(scenario.cost),
    }
    if scenario.m_phi:
        section.update(Q=format_matrix(scenario.Q), R=format_matrix(scenario.R), r=format_vector(scenario.r))
    if scenario.n_local:
        section.update(
            E=format_matrix(scenario.E) if scenario.m else "",
            local_cost=format_vector(scenario.local_cost),
            local_lower=format_vector(scenario.local_lower),
            local_upper=format_vector(scenario.local_upper),
        )
    parser[name] = section


def _instance_parser(inst: StationaryInstance) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["instance"] = {
        "name": inst.name,
        "n": str(inst.n),
        "discount": repr(inst.discount),
        "scenarios": str(inst.N),
        "lower": format_vector(inst.lower),
        "upper": format_vector(inst.upper),
        "x0": format_vector(inst.x0),
    }
    for index, scenario in enumerate(inst.all_scenarios):
        _write_scenario(parser, f"scenario {index}", scenario)
    return parser


def _write_parser(parser, path, header: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as handle:
        handle.write(f"# {header}\n")
        parser.write(handle)


def write_instance(inst: StationaryInstance, path) -> None:
    _write_parser(_instance_parser(inst), path, "dualdp stationary instance")
    logger.info(f"Wrote instance '{inst.name}' to {path}")


# --- hierarchical instance files ---

def _stage_block_from(section, dim_up: int) -> StageBlock:
    lower = parse_vector(_require(section, "lower"), "lower")
    upper = parse_vector(_require(section, "upper"), "upper")
    b = parse_vector(section.get("b", ""), "b")
    dim = lower.size
    try:
        return StageBlock(
            A=parse_matrix(section.get("A", ""), dim, "A"),
            B=parse_matrix(section.get("B", ""), dim_up, "B"),
            b=b,
            is_equality=parse_senses(section.get("rows", ""), b.size),
            cost=parse_cost(_require(section, "cost"), dim),
            lower=lower,
            upper=upper,
        )
    except ValueError as exc:
        raise ParseError(f"[{section.name}]: {exc}") from exc


def _write_stage_block(parser, name: str, block: StageBlock) -> None:
    parser[name] = {
        "A": format_matrix(block.A) if block.b.size else "",
        "B": format_matrix(block.B) if block.b.size else "",
        "b": format_vector(block.b),
        "rows": format_senses(block.is_equality),
        "cost": format_cost(block.cost),
        "lower": format_vector(block.lower),
        "upper": format_vector(block.upper),
    }


def read_hierarchical(path):
    from dualdp.services.hddp import HierarchicalInstance

    parser = _read_parser(path)
    top = _instance_from(parser, Path(path).stem)
    if "hierarchy" not in parser:
        raise ParseError("missing [hierarchy] section")
    head = parser["hierarchy"]
    try:
        N2 = int(_require(head, "samples"))
        n1 = int(_require(head, "n1"))
    except ValueError as exc:
        raise ParseError(f"[hierarchy]: {exc}") from exc

    if "first" in parser:
        first = (_stage_block_from(parser["first"], top.n),)
    else:
        first = tuple(_stage_block_from(parser[f"first {i}"], top.n) for i in range(top.N + 1))
    second = tuple(_stage_block_from(parser[f"second {j}"], n1) for j in range(1, N2 + 1))

    optional = {key: float(head[key]) for key in ("M_D", "G_bar") if key in head}
    return HierarchicalInstance(
        top=top,
        lower=TwoStageLowerLevel(first=first, second_samples=second),
        eps_lo=float(_require(head, "eps_lo")),
        rho=float(_require(head, "rho")),
        eps0=float(_require(head, "eps0")),
        M_D_estimate=optional.get("M_D"),
        G_bar=optional.get("G_bar"),
    )


def is_hierarchical(path) -> bool:
    return "hierarchy" in _read_parser(path)


def write_hierarchical(hinst, path) -> None:
    parser = _instance_parser(hinst.top)
    head = {
        "samples": str(hinst.lower.N2),
        "n1": str(hinst.lower.n1),
        "eps_lo": repr(hinst.eps_lo),
        "rho": repr(hinst.rho),
        "eps0": repr(hinst.eps0),
    }
    if hinst.M_D_estimate is not None:
        head["M_D"] = repr(hinst.M_D_estimate)
    if hinst.G_bar is not None:
        head["G_bar"] = repr(hinst.G_bar)
    parser["hierarchy"] = head
    if len(hinst.lower.first) == 1:
        _write_stage_block(parser, "first", hinst.lower.first[0])
    else:
        for index, block in enumerate(hinst.lower.first):
            _write_stage_block(parser, f"first {index}", block)
    for index, block in enumerate(hinst.lower.second_samples, start=1):
        _write_stage_block(parser, f"second {index}", block)
    _write_parser(parser, path, "dualdp hierarchical instance")
    logger.info(f"Wrote hierarchical instance '{hinst.top.name}' to {path}")


# --- extensive LP files ---

def _format_entries(matrix) -> str:
    coo = sparse.coo_matrix(matrix)
    return " ; ".join(f"{i} {j} {float(v)!r}" for i, j, v in zip(coo.row, coo.col, coo.data))


def _parse_entries(text: str, shape: tuple[int, int], key: str):
    rows, cols, vals = [], [], []
    for entry in (e for e in text.split(";") if e.strip()):
        parts = _SPLIT.split(entry.strip())
        if len(parts) != 3:
            raise ParseError(f"'{key}': entry '{entry.strip()}' is not 'row col value'")
        rows.append(int(parts[0]))
        cols.append(int(parts[1]))
        vals.append(float(parts[2]))
    return sparse.csr_matrix((vals, (rows, cols)), shape=shape)


def write_lp(lp: LpProblem, path) -> None:
    """[lp] section; matrices as sparse 'row col value' triplets separated by ';'."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["lp"] = {
        "vars": str(lp.n_vars),
        "objective": format_vector(lp.objective),
        "eq_rows": str(lp.n_eq),
        "eq_entries": _format_entries(lp.eq_matrix),
        "eq_rhs": format_vector(lp.eq_rhs),
        "geq_rows": str(lp.n_geq),
        "geq_entries": _format_entries(lp.geq_matrix),
        "geq_rhs": format_vector(lp.geq_rhs),
        "lower": format_vector(lp.lower),
        "upper": format_vector(lp.upper),
    }
    _write_parser(parser, path, "dualdp extensive-form LP")
    logger.info(f"Wrote LP with {lp.n_vars} variables and {lp.n_rows} rows to {path}")


def read_lp(path) -> LpProblem:
    parser = _read_parser(path)
    if "lp" not in parser:
        raise ParseError("missing [lp] section")
    section = parser["lp"]
    n = int(_require(section, "vars"))
    n_eq, n_geq = int(_require(section, "eq_rows")), int(_require(section, "geq_rows"))
    return LpProblem(
        objective=parse_vector(_require(section, "objective"), "objective"),
        eq_matrix=_parse_entries(section.get("eq_entries", ""), (n_eq, n), "eq_entries"),
        eq_rhs=parse_vector(section.get("eq_rhs", ""), "eq_rhs"),
        geq_matrix=_parse_entries(section.get("geq_entries", ""), (n_geq, n), "geq_entries"),
        geq_rhs=parse_vector(section.get("geq_rhs", ""), "geq_rhs"),
        lower=parse_vector(_require(section, "lower"), "lower"),
        upper=parse_vector(_require(section, "upper"), "upper"),
    )


# --- CSV outputs ---

def write_frame(frame: pd.DataFrame, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="")


def trace_frame(records: list[IterationRecord], hierarchical: bool = False) -> pd.DataFrame:
    columns = HDDP_COLUMNS if hierarchical else TRACE_COLUMNS
    return pd.DataFrame([r.model_dump(include=set(columns)) for r in records], columns=columns)


def write_trace(records: list[IterationRecord], path, hierarchical: bool = False) -> None:
    write_frame(trace_frame(records, hierarchical), path)
    logger.info(f"Wrote trace with {len(records)} rows to {path}")


def read_trace(path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"trace file not found: {path}")
    frame = pd.read_csv(path)
    missing = {"iter", "lb_root"} - set(frame.columns)
    if missing:
        raise ParseError(f"trace {path} lacks columns {sorted(missing)}")
    return frame


def write_dumps(result, directory) -> None:
    """cuts.csv, upper_points.csv, saturation.csv and, for hddp, the last root PDSA trace."""
    directory = Path(directory)
    if result.lower is not None:
        write_frame(result.lower.to_frame(), directory / "cuts.csv")
    if result.upper is not None:
        write_frame(result.upper.to_frame(), directory / "upper_points.csv")
    if result.saturation is not None:
        write_frame(result.saturation.to_frame(), directory / "saturation.csv")
    if result.pdsa_diagnostics is not None:
        write_frame(result.pdsa_diagnostics, directory / "pdsa_diagnostics.csv")
    logger.info(f"Wrote model dumps to {directory}")
