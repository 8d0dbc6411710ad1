"""Parameter counting and auditing, independent of tensor allocation.

All counts are exact integers; the divisions by the group count must come
out even or the channel plan is invalid.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass, field

from .layers import ConvMConfig
from .network import NetworkSpec

# Table of golden per-layer counts for the reference network, keyed by
# 1-based layer index (layers without weights are absent).
REFERENCE_COUNTS = {
    2: 9_408,
    4: 51_712,
    6: 217_088,
    7: 268_288,
    9: 591_872,
    10: 681_984,
    12: 783_360,
    13: 826_368,
    15: 688_000,
}
REFERENCE_TOTAL = 4_118_080


def _exact_div(num: int, den: int, what: str) -> int:
    if num % den:
        raise ValueError(f"{what}: {num} not divisible by groups={den}")
    return num // den


def count_branch1(cfg: ConvMConfig) -> int:
    """1x1 projection plus two grouped k x k convs of the regular branch."""
    k2 = cfg.k * cfg.k
    return (cfg.n_in * cfg.c1
            + _exact_div(cfg.c1 * cfg.c2 * k2, cfg.groups, "branch1 c2")
            + _exact_div(cfg.c2 * cfg.c3 * k2, cfg.groups, "branch1 c3"))


def count_branch2(cfg: ConvMConfig) -> int:
    """Dilated branch; dilation adds no weights."""
    k2 = cfg.k * cfg.k
    return (cfg.n_in * cfg.c4
            + _exact_div(cfg.c4 * cfg.dic1 * k2, cfg.groups, "branch2 dic1")
            + _exact_div(cfg.dic1 * cfg.dic2 * k2, cfg.groups, "branch2 dic2"))


def count_branch3(cfg: ConvMConfig) -> int:
    """Transposed-conv branch; the crop adds no weights."""
    k2 = cfg.k * cfg.k
    return (cfg.n_in * cfg.c5
            + _exact_div(cfg.c5 * cfg.dec1 * k2, cfg.groups, "branch3 dec1")
            + _exact_div(cfg.dec1 * cfg.dec2 * k2, cfg.groups, "branch3 dec2"))


def count_conv_m(cfg: ConvMConfig) -> int:
    return count_branch1(cfg) + count_branch2(cfg) + count_branch3(cfg)


@dataclass
class ReportEntry:
    layer: int  # 1-based, matching the architecture table
    kind: str
    computed: int
    reference: int | None = None

    @property
    def diff(self) -> int | None:
        return None if self.reference is None else self.computed - self.reference


@dataclass
class ParamReport:
    entries: list[ReportEntry] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(e.computed for e in self.entries)

    @property
    def passed(self) -> bool:
        return all(e.diff in (None, 0) for e in self.entries)

    @property
    def has_reference(self) -> bool:
        return any(e.reference is not None for e in self.entries)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["layer", "kind", "computed", "reference", "diff"])
        for e in self.entries:
            w.writerow([e.layer, e.kind, e.computed,
                        "" if e.reference is None else e.reference,
                        "" if e.diff is None else e.diff])
        w.writerow(["total", "", self.total, "", ""])
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'layer':>5}  {'kind':<10} {'computed':>10} {'reference':>10} {'diff':>8}"]
        for e in self.entries:
            ref = "" if e.reference is None else f"{e.reference:,}"
            diff = "" if e.diff is None else f"{e.diff:+d}"
            lines.append(f"{e.layer:>5}  {e.kind:<10} {e.computed:>10,} {ref:>10} {diff:>8}")
        lines.append(f"{'total':>5}  {'':<10} {self.total:>10,}")
        return "\n".join(lines)


def count_network(spec: NetworkSpec) -> ParamReport:
    """Per-layer weight counts for every layer that carries weights."""
    report = ParamReport()
    prev_c = None
    feat = None
    for i, e in enumerate(spec.layers):
        p = e.params
        layer_no = i + 1
        if e.kind == "input":
            prev_c = p["channels"]
        elif e.kind == "conv":
            g = p.get("groups", 1)
            n = _exact_div(p["k"] * p["k"] * prev_c * p["out_channels"], g, f"layer {layer_no}")
            report.entries.append(ReportEntry(layer_no, "conv", n))
            prev_c = p["out_channels"]
        elif e.kind == "conv_m":
            cfg = p["cfg"]
            report.entries.append(ReportEntry(layer_no, "conv_m", count_conv_m(cfg)))
            prev_c = cfg.out_channels
            feat = prev_c
        elif e.kind in ("maxpool", "avgpool"):
            feat = prev_c
        elif e.kind == "linear":
            report.entries.append(ReportEntry(layer_no, "linear", feat * p["out_features"]))
            feat = p["out_features"]
            prev_c = feat
        else:
            raise ValueError(f"unknown layer kind {e.kind!r}")
    return report


def solve_groups(cfg: ConvMConfig, target_count: int) -> int:
    """Invert the three branch formulas: find the unique positive integer g
    with projection_count + grouped_count/g == target_count."""
    proj = cfg.n_in * (cfg.c1 + cfg.c4 + cfg.c5)
    k2 = cfg.k * cfg.k
    grouped = k2 * (cfg.c1 * cfg.c2 + cfg.c2 * cfg.c3
                    + cfg.c4 * cfg.dic1 + cfg.dic1 * cfg.dic2
                    + cfg.c5 * cfg.dec1 + cfg.dec1 * cfg.dec2)
    rem = target_count - proj
    if rem <= 0:
        raise ValueError(f"target {target_count} at or below the projection floor {proj}")
    if grouped % rem:
        raise ValueError(f"no integer group count reaches {target_count}")
    g = grouped // rem
    channels = (cfg.c1, cfg.c2, cfg.c3, cfg.c4, cfg.dic1, cfg.dic2,
                cfg.c5, cfg.dec1, cfg.dec2)
    if any(c % g for c in channels):
        raise ValueError(f"derived group count {g} does not divide the channel plan")
    return g


def audit(spec: NetworkSpec, reference: dict[int, int] | None = None) -> ParamReport:
    """Count the spec and diff against golden per-layer counts (1-based layer
    index -> count). Mismatches land in the report, they do not raise."""
    report = count_network(spec)
    if reference:
        by_layer = {e.layer: e for e in report.entries}
        for layer_no, count in reference.items():
            if layer_no not in by_layer:
                raise ValueError(f"reference layer {layer_no} has no weights in the spec")
            by_layer[layer_no].reference = count
    return report
