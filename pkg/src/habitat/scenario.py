"""Scenario files: one JSON document describing market, habit, utility and start.

Top-level keys are ``market``, ``habit``, ``utility``, ``initial`` and the
optional ``options`` and ``description``.  Probabilities are written as
decimal strings so fixtures round-trip bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import DEFAULT_OPTIONS, SolverOptions
from .errors import ArbitrageError, ContractViolation, PreconditionError
from .habit import HabitSpec, check_persistence
from .market import EventTree, build_scenario, tree_to_dict
from .utility import UtilitySpec, make_utility

_DECODER = json.JSONDecoder()
_WS = " \t\n\r"


class ScenarioError(ContractViolation):
    """Schema or invariant violations, each prefixed by its line number."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.violations))


# ---------------------------------------------------------------------------
# JSON with line positions
# ---------------------------------------------------------------------------


def _skip(text: str, i: int) -> int:
    while i < len(text) and text[i] in _WS:
        i += 1
    return i


def _line(text: str, i: int) -> int:
    return text.count("\n", 0, i) + 1


def _parse(text: str, i: int, path: str, lines: dict):
    i = _skip(text, i)
    lines[path] = _line(text, i)
    if i >= len(text):
        raise ScenarioError([f"line {_line(text, i)}: unexpected end of document"])
    ch = text[i]
    if ch == "{":
        out = {}
        i = _skip(text, i + 1)
        if text[i:i + 1] == "}":
            return out, i + 1
        while True:
            i = _skip(text, i)
            try:
                key, i = _DECODER.raw_decode(text, i)
            except json.JSONDecodeError as exc:
                raise ScenarioError([f"line {exc.lineno}: {exc.msg}"]) from None
            if not isinstance(key, str):
                raise ScenarioError([f"line {_line(text, i)}: object keys must be strings"])
            if key in out:
                raise ScenarioError([f"line {_line(text, i)}: duplicate key {key!r}"])
            i = _skip(text, i)
            if text[i:i + 1] != ":":
                raise ScenarioError([f"line {_line(text, i)}: expected ':' after key {key!r}"])
            sub = f"{path}.{key}" if path else key
            out[key], i = _parse(text, i + 1, sub, lines)
            i = _skip(text, i)
            if text[i:i + 1] == ",":
                i += 1
                continue
            if text[i:i + 1] == "}":
                return out, i + 1
            raise ScenarioError([f"line {_line(text, i)}: expected ',' or '}}'"])
    if ch == "[":
        out = []
        i = _skip(text, i + 1)
        if text[i:i + 1] == "]":
            return out, i + 1
        while True:
            val, i = _parse(text, i, f"{path}[{len(out)}]", lines)
            out.append(val)
            i = _skip(text, i)
            if text[i:i + 1] == ",":
                i += 1
                continue
            if text[i:i + 1] == "]":
                return out, i + 1
            raise ScenarioError([f"line {_line(text, i)}: expected ',' or ']'"])
    try:
        return _DECODER.raw_decode(text, i)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"line {exc.lineno}: {exc.msg}"]) from None


def load_json_with_lines(text: str):
    lines: dict = {}
    value, end = _parse(text, 0, "", lines)
    end = _skip(text, end)
    if end != len(text):
        raise ScenarioError([f"line {_line(text, end)}: trailing content after the document"])
    return value, lines


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

_TOP = {"market": True, "habit": True, "utility": True, "initial": True, "options": False, "description": False}
_MARKET = {
    "binomial": {"kind", "N", "u", "d", "p", "T", "s0"},
    "trinomial": {"kind", "N", "moves", "probs", "T", "s0"},
    "multinomial": {"kind", "N", "moves", "probs", "T", "s0"},
    "custom": {"kind", "tree"},
}
_MARKET_REQUIRED = {
    "binomial": {"N", "u", "d"},
    "trinomial": {"N", "moves"},
    "multinomial": {"N", "moves"},
    "custom": {"tree"},
}
_HABIT_FORMS = {"constant", "per_epoch", "per_node"}
_UTILITY = {"log": {"family", "beta"}, "power": {"family", "p", "beta"}}


@dataclass
class Scenario:
    market: dict
    habit: dict
    utility: dict
    x: float
    z: float
    options: SolverOptions = DEFAULT_OPTIONS
    description: str = ""
    tree: Optional[EventTree] = field(default=None, compare=False, repr=False)
    habit_spec: Optional[HabitSpec] = field(default=None, compare=False, repr=False)
    utility_spec: Optional[UtilitySpec] = field(default=None, compare=False, repr=False)
    source: Optional[str] = field(default=None, compare=False)

    def canonical(self) -> dict:
        out = {"description": self.description} if self.description else {}
        out.update({
            "market": self.market,
            "habit": self.habit,
            "utility": self.utility,
            "initial": {"x": self.x, "z": self.z},
        })
        changed = {k: v for k, v in self.options.to_dict().items() if v != getattr(DEFAULT_OPTIONS, k)}
        if changed:
            out["options"] = changed
        return out


def _prob_text(v) -> str:
    return repr(float(v))


def _number(raw, where, errors, lines, positive=False, integer=False):
    line = lines.get(where, "?")
    if isinstance(raw, bool) or not isinstance(raw, (int, float, str)):
        errors.append(f"line {line}: {where} must be a number")
        return None
    try:
        val = float(raw)
    except ValueError:
        errors.append(f"line {line}: {where} is not a decimal number ({raw!r})")
        return None
    if not np.isfinite(val):
        errors.append(f"line {line}: {where} must be finite")
        return None
    if integer and val != int(val):
        errors.append(f"line {line}: {where} must be an integer")
        return None
    if positive and val <= 0:
        errors.append(f"line {line}: {where} must be positive")
        return None
    return int(val) if integer else val


def _check_keys(obj, allowed, required, where, errors, lines):
    line = lines.get(where, "?")
    if not isinstance(obj, dict):
        errors.append(f"line {line}: {where or 'document'} must be an object")
        return False
    for k in obj:
        if k not in allowed:
            sub = f"{where}.{k}" if where else k
            errors.append(f"line {lines.get(sub, line)}: unknown field {sub!r}")
    for k in sorted(required):
        if k not in obj:
            errors.append(f"line {line}: missing required field {(where + '.' if where else '') + k!r}")
    return True


def _canonical_market(raw: dict, errors, lines) -> Optional[dict]:
    kind = raw.get("kind")
    if kind not in _MARKET:
        errors.append(f"line {lines.get('market.kind', lines.get('market', '?'))}: "
                      f"market.kind must be one of {sorted(_MARKET)}")
        return None
    _check_keys(raw, _MARKET[kind], _MARKET_REQUIRED[kind] | {"kind"}, "market", errors, lines)
    out: dict = {"kind": kind}
    if kind == "custom":
        tree = raw.get("tree")
        if not isinstance(tree, dict) or set(tree) != {"times", "nodes"}:
            errors.append(f"line {lines.get('market.tree', '?')}: market.tree needs exactly 'times' and 'nodes'")
            return None
        nodes = []
        for i, nd in enumerate(tree["nodes"]):
            where = f"market.tree.nodes[{i}]"
            if not _check_keys(nd, {"parent", "prob", "prices", "time_index"},
                               {"parent", "prob", "prices", "time_index"}, where, errors, lines):
                continue
            prob = _number(nd.get("prob"), f"{where}.prob", errors, lines)
            if prob is not None and not (0.0 < prob <= 1.0):
                errors.append(f"line {lines.get(where + '.prob', '?')}: node {i}: transition probability "
                              f"{prob!r} must lie in (0, 1]")
            nodes.append({
                "parent": nd.get("parent"),
                "prob": _prob_text(prob) if prob is not None else nd.get("prob"),
                "prices": [float(s) for s in nd.get("prices", [])],
                "time_index": nd.get("time_index"),
            })
        out["tree"] = {"times": [float(t) for t in tree["times"]], "nodes": nodes}
        return out
    for key in sorted(_MARKET[kind] - {"kind"}):
        if key not in raw:
            continue
        where = f"market.{key}"
        if key == "N":
            out[key] = _number(raw[key], where, errors, lines, positive=True, integer=True)
        elif key == "p":
            val = _number(raw[key], where, errors, lines)
            out[key] = None if val is None else _prob_text(val)
        elif key == "probs":
            out[key] = [_prob_text(v) if _number(v, f"{where}[{j}]", errors, lines) is not None else v
                        for j, v in enumerate(raw[key])]
        elif key == "moves":
            out[key] = np.asarray(raw[key], dtype=float).tolist()
        elif key == "s0":
            out[key] = np.asarray(raw[key], dtype=float).tolist()
        else:
            out[key] = _number(raw[key], where, errors, lines, positive=True)
    return out


def _canonical_habit(raw: dict, errors, lines) -> Optional[dict]:
    if not _check_keys(raw, {"alpha", "delta"}, {"alpha", "delta"}, "habit", errors, lines):
        return None
    out = {}
    for key in ("alpha", "delta"):
        entry = raw.get(key)
        where = f"habit.{key}"
        if not isinstance(entry, dict) or len(entry) != 1 or next(iter(entry)) not in _HABIT_FORMS:
            errors.append(f"line {lines.get(where, '?')}: {where} must be one of "
                          f"{{'constant': v}}, {{'per_epoch': [...]}}, {{'per_node': [...]}}")
            continue
        form, val = next(iter(entry.items()))
        if form == "constant":
            num = _number(val, f"{where}.constant", errors, lines)
            if num is not None and num < 0:
                errors.append(f"line {lines.get(where + '.constant', '?')}: {where} must be nonnegative")
            out[key] = {form: num}
        else:
            vals = []
            for j, v in enumerate(val if isinstance(val, list) else []):
                num = _number(v, f"{where}.{form}[{j}]", errors, lines)
                if num is not None and num < 0:
                    errors.append(f"line {lines.get(f'{where}.{form}[{j}]', '?')}: {where} entry {j} is negative")
                vals.append(num)
            if not isinstance(val, list):
                errors.append(f"line {lines.get(where, '?')}: {where}.{form} must be a list")
            out[key] = {form: vals}
    return out


def _canonical_utility(raw: dict, errors, lines) -> Optional[dict]:
    fam = raw.get("family")
    if fam not in _UTILITY:
        errors.append(f"line {lines.get('utility.family', lines.get('utility', '?'))}: utility.family must be "
                      f"one of {sorted(_UTILITY)} (custom utilities are code-level only)")
        return None
    _check_keys(raw, _UTILITY[fam], {"family"} | ({"p"} if fam == "power" else set()), "utility", errors, lines)
    out = {"family": fam, "beta": 0.0}
    for key in sorted(_UTILITY[fam] - {"family"}):
        if key in raw:
            out[key] = _number(raw[key], f"utility.{key}", errors, lines)
    return out


def _habit_table(tree: EventTree, entry: dict, name: str, line) -> np.ndarray:
    form, val = next(iter(entry.items()))
    if form == "constant":
        return np.full(tree.n_nodes, float(val))
    arr = np.asarray(val, dtype=float)
    if form == "per_epoch":
        if arr.size != tree.horizon:
            raise ContractViolation(f"line {line}: habit.{name}.per_epoch needs {tree.horizon} entries")
        return arr[np.minimum(tree.time_index, tree.horizon - 1)]
    if arr.size != tree.n_nodes:
        raise ContractViolation(f"line {line}: habit.{name}.per_node needs {tree.n_nodes} entries")
    return arr


def build(scn: Scenario, lines: Optional[dict] = None) -> Scenario:
    """Construct and validate the tree, habit and utility objects of ``scn``."""
    lines = lines or {}
    errors = []
    m = dict(scn.market)
    kind = m.pop("kind")
    try:
        if kind == "custom":
            tree = build_scenario("custom", tree=m["tree"])
        else:
            params = {k: v for k, v in m.items() if v is not None}
            if "p" in params:
                params["p"] = float(params["p"])
            if "probs" in params:
                params["probs"] = [float(v) for v in params["probs"]]
            tree = build_scenario(kind, **params)
    except (ContractViolation, ArbitrageError, PreconditionError, KeyError, TypeError, ValueError) as exc:
        raise ScenarioError([f"line {lines.get('market', '?')}: market: {exc}"]) from None
    try:
        alpha = _habit_table(tree, scn.habit["alpha"], "alpha", lines.get("habit.alpha", "?"))
        delta = _habit_table(tree, scn.habit["delta"], "delta", lines.get("habit.delta", "?"))
        habit = HabitSpec(alpha, delta)
        check_persistence(tree, habit)
    except (ContractViolation, PreconditionError) as exc:
        errors.append(f"line {lines.get('habit', '?')}: habit: {exc}")
        habit = None
    try:
        utility = make_utility(scn.utility["family"], **{k: v for k, v in scn.utility.items() if k != "family"})
    except ContractViolation as exc:
        errors.append(f"line {lines.get('utility', '?')}: utility: {exc}")
        utility = None
    if errors:
        raise ScenarioError(errors)
    scn.tree, scn.habit_spec, scn.utility_spec = tree, habit, utility
    return scn


def parse_scenario_text(text: str, source: Optional[str] = None) -> Scenario:
    data, lines = load_json_with_lines(text)
    errors: list = []
    if not _check_keys(data, set(_TOP), {k for k, req in _TOP.items() if req}, "", errors, lines):
        raise ScenarioError(errors)
    market = _canonical_market(data["market"], errors, lines) if isinstance(data.get("market"), dict) else None
    habit = _canonical_habit(data["habit"], errors, lines) if isinstance(data.get("habit"), dict) else None
    utility = _canonical_utility(data["utility"], errors, lines) if isinstance(data.get("utility"), dict) else None
    x = z = None
    init = data.get("initial")
    if init is not None and _check_keys(init, {"x", "z"}, {"x", "z"}, "initial", errors, lines):
        x = _number(init.get("x"), "initial.x", errors, lines) if "x" in init else None
        z = _number(init.get("z"), "initial.z", errors, lines) if "z" in init else None
    options = DEFAULT_OPTIONS
    if "options" in data:
        raw = data["options"]
        if not isinstance(raw, dict):
            errors.append(f"line {lines.get('options', '?')}: options must be an object")
        else:
            try:
                options = DEFAULT_OPTIONS.with_overrides({k: v for k, v in raw.items()})
            except (KeyError, ValueError) as exc:
                errors.append(f"line {lines.get('options', '?')}: options: {exc}")
    description = data.get("description", "")
    if not isinstance(description, str):
        errors.append(f"line {lines.get('description', '?')}: description must be a string")
    if errors:
        raise ScenarioError(errors)
    scn = Scenario(market, habit, utility, x, z, options, description, source=source)
    return build(scn, lines)


def parse_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError([f"cannot read {path}: {exc}"]) from None
    return parse_scenario_text(text, source=str(path))


def emit_scenario(scn: Scenario) -> str:
    return json.dumps(scn.canonical(), indent=2) + "\n"


def scenario_from_objects(tree: EventTree, habit: HabitSpec, utility: UtilitySpec, x: float, z: float,
                          options: SolverOptions = DEFAULT_OPTIONS, description: str = "") -> Scenario:
    """Wrap in-memory objects as a custom-market scenario."""
    market = {"kind": "custom", "tree": tree_to_dict(tree)}
    hab = {"alpha": {"per_node": [float(a) for a in habit.alpha]},
           "delta": {"per_node": [float(d) for d in habit.delta]}}
    raw = utility.to_dict()
    util = {"family": raw["family"], "beta": float(raw.get("beta", 0.0))}
    util.update({k: raw[k] for k in sorted(raw) if k not in util})
    scn = Scenario(market, hab, util, float(x), float(z), options, description)
    scn.tree, scn.habit_spec, scn.utility_spec = tree, habit, utility
    return scn


def bundled_scenarios() -> dict:
    """Paths of the scenario files shipped with the package."""
    data = Path(__file__).parent / "data"
    return {p.stem: p for p in sorted(data.glob("*.scn"))}
