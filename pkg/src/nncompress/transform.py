"""Structural transforms: layer pruning and weight tying across repeated residual blocks."""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import CorruptionError, PlanError
from .model import Layer, Network, param_accounting


def prune_at(net: Network, layer_name: str) -> Network:
    """Keep the layers up to and including ``layer_name``; everything deeper is dropped."""
    if layer_name not in net:
        raise ValueError(f"unknown layer {layer_name!r}")
    cut = net.index(layer_name)
    return Network(net.layers[: cut + 1], net.arch_tag)


@dataclass(frozen=True)
class TieGroup:
    template: tuple[str, ...]
    repeat: int

    def __post_init__(self):
        object.__setattr__(self, "template", tuple(self.template))
        if not self.template:
            raise PlanError("a tying group needs at least one template layer")
        if self.repeat < 1:
            raise PlanError(f"repeat count must be >= 1, got {self.repeat}")


@dataclass
class TyingPlan:
    """Each group names a template block; the ``repeat - 1`` equally long runs of
    layers that directly follow it in the network are its repeats."""

    groups: list[TieGroup] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"groups": [{"template": list(g.template), "repeat": g.repeat} for g in self.groups]}

    @classmethod
    def from_dict(cls, obj: dict) -> "TyingPlan":
        return cls([TieGroup(tuple(g["template"]), int(g["repeat"])) for g in obj.get("groups", [])])


@dataclass(frozen=True)
class Ref:
    template: str
    repeat: int
    name: str


@dataclass
class TiedNetwork:
    unique_layers: Network
    expansion: list[Ref]

    def to_dict(self) -> dict:
        return {"expansion": [[r.template, r.repeat, r.name] for r in self.expansion]}


def _same_structure(a: Layer, b: Layer) -> bool:
    return (a.kind == b.kind and a.hyperparams == b.hyperparams
            and a.tensors.keys() == b.tensors.keys()
            and all(a.tensors[r].shape == b.tensors[r].shape for r in a.tensors))


def tie_blocks(net: Network, plan: TyingPlan) -> TiedNetwork:
    """Store one copy of each template block and reference it for every repeat.

    The stored weights are those of the template (first) occurrence; repeats are
    assumed to share them, as in a network trained with tied weights.
    """
    owner: dict[int, tuple[int, int, int]] = {}  # layer position -> (template position, repeat, group)
    for gi, group in enumerate(plan.groups):
        try:
            start = net.index(group.template[0])
        except KeyError:
            raise PlanError(f"tying group {gi}: unknown layer {group.template[0]!r}") from None
        n = len(group.template)
        if net.names[start:start + n] != list(group.template):
            raise PlanError(f"tying group {gi}: template layers must be contiguous and in network order")
        if start + n * group.repeat > len(net.layers):
            raise PlanError(f"tying group {gi}: network ends before repeat {group.repeat}")
        for r in range(group.repeat):
            for j in range(n):
                pos = start + r * n + j
                if pos in owner:
                    raise PlanError(f"tying groups overlap at layer {net.layers[pos].name!r}")
                tmpl, cand = net.layers[start + j], net.layers[pos]
                if not _same_structure(tmpl, cand):
                    raise PlanError(f"tying group {gi}: {cand.name!r} does not match template {tmpl.name!r}")
                owner[pos] = (start + j, r, gi)

    unique, expansion = [], []
    for pos, layer in enumerate(net.layers):
        tpos, rep, _ = owner.get(pos, (pos, 0, -1))
        if rep == 0:
            unique.append(layer)
        expansion.append(Ref(net.layers[tpos].name, rep, layer.name))
    return TiedNetwork(Network(unique, net.arch_tag), expansion)


def untie(tn: TiedNetwork) -> Network:
    """Materialise every reference; repeated blocks share the template's tensors."""
    layers = []
    for ref in tn.expansion:
        if ref.template not in tn.unique_layers:
            raise CorruptionError(f"expansion references unknown template layer {ref.template!r}")
        tmpl = tn.unique_layers[ref.template]
        layers.append(Layer(ref.name, tmpl.kind, dict(tmpl.tensors), dict(tmpl.hyperparams)))
    return Network(layers, tn.unique_layers.arch_tag)


@dataclass(frozen=True)
class SharedCount:
    unique: int
    expanded: int

    @property
    def ratio(self) -> float:
        return self.expanded / self.unique if self.unique else 1.0


def shared_param_count(tn: TiedNetwork) -> SharedCount:
    """Conv parameter totals as stored (``unique``) and as materialised (``expanded``)."""
    per_layer = {c.name: c.conv for c in param_accounting(tn.unique_layers).layers}
    unique = sum(per_layer.values())
    expanded = sum(per_layer.get(ref.template, 0) for ref in tn.expansion)
    return SharedCount(unique, expanded)
