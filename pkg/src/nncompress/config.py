"""INI-style text dialect shared by quantization specs and tying plans.

Example::

    [quantization]
    default = scalar:4        # scalar:<bits> | vector:<k>x<d> | exempt
    bn_exempt = true
    bias_exempt = false

    [layers]
    conv1 = scalar:8
    conv5 = vector:64x2

    [tying]
    # <group label> = <template layer>, <template layer>, ... * <repeat count>
    stage2 = conv2_1_conv1, conv2_1_bn1, conv2_1_relu1 * 2

Layer names are case-sensitive.  Either section group may be omitted.
"""
from __future__ import annotations

import configparser
from pathlib import Path

from .errors import ConfigError
from .quantize import EXEMPT, QuantizationSpec, parse_mode
from .transform import TieGroup, TyingPlan


def _parser(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparsable config: {exc}") from exc
    unknown = set(cp.sections()) - {"quantization", "layers", "tying"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return cp


def parse_spec(text: str) -> QuantizationSpec:
    cp = _parser(text)
    spec = QuantizationSpec(EXEMPT)
    if cp.has_section("quantization"):
        sec = cp["quantization"]
        unknown = set(sec) - {"default", "bn_exempt", "bias_exempt"}
        if unknown:
            raise ConfigError(f"unknown [quantization] keys: {sorted(unknown)}")
        try:
            spec.default = parse_mode(sec.get("default", "exempt"))
            spec.bn_exempt = sec.getboolean("bn_exempt", True)
            spec.bias_exempt = sec.getboolean("bias_exempt", False)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if cp.has_section("layers"):
        spec.layers = {name: parse_mode(mode) for name, mode in cp["layers"].items()}
    return spec


def parse_plan(text: str) -> TyingPlan:
    cp = _parser(text)
    groups = []
    if cp.has_section("tying"):
        for label, value in cp["tying"].items():
            names, sep, count = value.rpartition("*")
            if not sep:
                raise ConfigError(f"tying group {label!r}: expected '<layers> * <repeat>'")
            try:
                repeat = int(count)
            except ValueError:
                raise ConfigError(f"tying group {label!r}: bad repeat count {count.strip()!r}") from None
            template = tuple(n.strip() for n in names.split(",") if n.strip())
            groups.append(TieGroup(template, repeat))
    return TyingPlan(groups)


def format_spec(spec: QuantizationSpec) -> str:
    lines = ["[quantization]", f"default = {spec.default}", f"bn_exempt = {str(spec.bn_exempt).lower()}",
             f"bias_exempt = {str(spec.bias_exempt).lower()}"]
    if spec.layers:
        lines += ["", "[layers]"] + [f"{name} = {mode}" for name, mode in spec.layers.items()]
    return "\n".join(lines) + "\n"


def format_plan(plan: TyingPlan) -> str:
    lines = ["[tying]"]
    for i, g in enumerate(plan.groups):
        lines.append(f"group{i + 1} = {', '.join(g.template)} * {g.repeat}")
    return "\n".join(lines) + "\n"


def load_spec(path) -> QuantizationSpec:
    return parse_spec(Path(path).read_text())


def load_plan(path) -> TyingPlan:
    return parse_plan(Path(path).read_text())
