"""Static cost accounting: parameters and multiply-accumulates per layer.

MAC conventions, chosen to reproduce the published complexity figures
(one MAC is reported as one FLOP):

    conv    k^2 * c_in * c_out * out_h * out_w * n  (+ c_out*out_h*out_w*n bias adds)
    bn      2 per output element (scale, shift)
    relu    1 per output element
    pool    4 per output element (2x2 window sum + scale)
    resize  8 per output element (4 taps, weight + accumulate)

Channel concatenation and slicing move no arithmetic and are not listed.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

from .arch import Network

__all__ = ["CostReport", "count_params", "count_macs", "build_report",
           "emit_report"]


def _step_params(step: dict) -> int:
    if step["kind"] == "conv":
        p = step["k"] ** 2 * step["ci"] * step["co"]
        if step["bias"]:
            p += step["co"]
        return p
    if step["kind"] == "bn":
        return 2 * step["c"]
    return 0


def _step_macs(step: dict) -> int:
    n, oh, ow = step["n"], step["oh"], step["ow"]
    kind = step["kind"]
    if kind == "conv":
        macs = step["k"] ** 2 * step["ci"] * step["co"] * oh * ow * n
        if step["bias"]:
            macs += step["co"] * oh * ow * n
        return macs
    per_element = {"bn": 2, "relu": 1, "pool": 4, "resize": 8}[kind]
    return per_element * step["c"] * oh * ow * n


@dataclass
class CostReport:
    arch: str
    resolution: tuple[int, int]
    rows: list[tuple[str, int, int]] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r[1] for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r[2] for r in self.rows)

    @property
    def gflops(self) -> float:
        return self.total_macs / 1e9


def count_params(net: Network) -> int:
    """Trainable values only; batchnorm running statistics excluded."""
    return net.params.num_values()


def count_macs(net: Network, n: int, h: int, w: int) -> int:
    steps, _ = net.plan(n, h, w)
    return sum(_step_macs(s) for s in steps)


def build_report(net: Network, n: int, h: int, w: int) -> CostReport:
    steps, _ = net.plan(n, h, w)
    report = CostReport(net.spec.name, (h, w))
    for step in steps:
        report.rows.append((step["name"], _step_params(step), _step_macs(step)))
    total = report.total_params
    counted = count_params(net)
    if total != counted:
        raise AssertionError(
            f"per-layer parameter sum {total} != parameter container {counted}")
    return report


def emit_report(report: CostReport, format: str = "table") -> str:
    """Render with stable column order (layer, params, macs), totals last."""
    rows = list(report.rows) + [("total", report.total_params, report.total_macs)]
    if format == "csv":
        out = io.StringIO()
        out.write("layer,params,macs\n")
        for name, p, m in rows:
            out.write(f"{name},{p},{m}\n")
        return out.getvalue()
    if format != "table":
        raise ValueError(f"unknown report format {format!r}")
    name_w = max(len(r[0]) for r in rows)
    h, w = report.resolution
    lines = [f"{report.arch} @ {h}x{w}",
             f"{'layer':<{name_w}}  {'params':>10}  {'macs':>14}"]
    for name, p, m in rows[:-1]:
        lines.append(f"{name:<{name_w}}  {p:>10,}  {m:>14,}")
    name, p, m = rows[-1]
    lines.append("-" * (name_w + 28))
    lines.append(f"{name:<{name_w}}  {p:>10,}  {m:>14,}")
    lines.append(f"params {p / 1e6:.3f} M   GFLOPs {m / 1e9:.1f}")
    return "\n".join(lines)
