"""Anomaly report document, claim templates and text rendering.

The document is a pydantic tree written as JSON; every model renders itself
into render blocks the formatters turn into text. The text table carries the
columns Window (ID / Timestamp), Method(s), Subsystem, Mainreasons, Claim.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, model_validator

from .attribution import (
    AnomalyIntervalSet,
    Attribution,
    CrossHostFinding,
    Reason,
    map_subsystems,
)
from .blocks import (
    DividerBlock,
    HeaderBlock,
    KeyValueBlock,
    ListBlock,
    RenderBlock,
    SpacerBlock,
    Style,
    TableBlock,
    TextBlock,
)
from .detectors import DETECTOR_ORDER, Detector, DetectorScores
from .features import Window, WindowSpec
from .formatters import Formatter, PlainFormatter
from .registry import Registry, Subsystem, default_registry, resolve_metric
from .timebase import format_offset
from .timebase import wall_time as wall_clock

logger = logging.getLogger(__name__)

NO_ANOMALIES = (
    "No anomalies detected: the system is adequately provisioned and operating."
)
TABLE_HEADERS = [
    "Window (ID / Timestamp)",
    "Method(s)",
    "Subsystem",
    "Mainreasons",
    "Claim",
]

# Feature-keyed claim templates; {label} is the metric's readable name.
CLAIM_TEMPLATES: dict[str, str] = {
    "variance": "{label} shows different within-window variance relative to baseline.",
    "autocorr_lag1": "{label} exhibits different lag-1 autocorrelation with the baseline.",
    "max": "{possessive} maximum exceeds the baseline reference, reflecting a single-window spike.",
    "std": "{label} shows a different standard deviation versus baseline.",
    "mean": "{label} shows a different within-window mean relative to baseline.",
    "min": "{possessive} minimum falls below the baseline reference.",
    "skewness": "{label} shows a different within-window skewness relative to baseline.",
    "kurtosis": "{label} shows heavier or lighter tails (kurtosis) than the baseline.",
    "linear_trend_slope": "{label} shows an abnormal trend within the window.",
    "mean_shift_stat": "{label} shows a mean shift within the window.",
    "sum": "{label} shows a burst in accumulated count relative to baseline.",
}
GENERIC_CLAIM = "{label} deviates from baseline in {feature}."
LOW_CONFIDENCE_NOTE = " Individual deviations are small; confidence is low."


def _possessive(label: str) -> str:
    return f"{label}’" if label.endswith("s") else f"{label}’s"


def claim_for(reason: Reason, registry: Registry) -> str:
    """Fixed claim sentence for the top reason of a record."""
    label = registry.label(resolve_metric(reason.channel, registry))
    instance = reason.channel[: -len(resolve_metric(reason.channel, registry))].rstrip(".")
    if instance:
        label = f"{label} ({instance})"
    template = CLAIM_TEMPLATES.get(reason.feature, GENERIC_CLAIM)
    if reason.feature == "max" and reason.direction == "low":
        template = "{possessive} maximum stays below the baseline reference."
    claim = template.format(label=label, possessive=_possessive(label), feature=reason.feature)
    return claim[0].upper() + claim[1:]


# =============================================================================
# Document models
# =============================================================================


@dataclass
class ReportRenderConfig:
    """Configuration for rendering a report as text."""

    show_evidence: bool = False
    max_reasons: int = 1  # reasons shown in the table cell


class Evidence(BaseModel):
    """Raw detector outputs behind a record."""

    scores: dict[str, float] = Field(default_factory=dict)
    thresholds: dict[str, float] = Field(default_factory=dict)
    pca_reasons: list[Reason] = Field(default_factory=list)


class AnomalyRecord(BaseModel):
    window_id: int
    host: str
    timestamp_ms: int
    wall_time: str | None = None
    methods: list[Detector]
    subsystems: list[Subsystem]
    reasons: list[Reason] = Field(min_length=1)
    claim: str
    agreement: int
    low_confidence: bool = False
    evidence: Evidence = Field(default_factory=Evidence)

    @model_validator(mode="after")
    def _agreement_matches_methods(self) -> AnomalyRecord:
        if self.agreement != len(self.methods):
            raise ValueError("agreement must equal the number of methods")
        return self

    def window_label(self) -> str:
        stamp = self.wall_time or format_offset(self.timestamp_ms)
        return f"{self.window_id} / {stamp}"

    def row(self, config: ReportRenderConfig) -> list[str]:
        reasons = "; ".join(
            f"{r.channel}.{r.feature} ({r.direction})" for r in self.reasons[: config.max_reasons]
        )
        return [
            self.window_label(),
            ", ".join(m.tag for m in self.methods),
            ", ".join(s.value for s in self.subsystems),
            reasons,
            self.claim,
        ]

    def render_evidence(self) -> list[RenderBlock]:
        items = [
            f"{name}: score {score:.4g} (threshold {self.evidence.thresholds.get(name, float('nan')):.4g})"
            for name, score in self.evidence.scores.items()
        ]
        items += [f"|z| {r.score:.3g} {r.channel}.{r.feature} ({r.direction})" for r in self.reasons]
        items += [
            f"PCA contribution {r.score:.3g} {r.channel}.{r.feature}" for r in self.evidence.pca_reasons
        ]
        return [
            TextBlock(text=f"window {self.window_label()}", indent=1, styles={Style.BOLD}),
            ListBlock(items=items, indent=2, bullet="-", styles={Style.EVIDENCE}),
        ]


class SubsystemShare(BaseModel):
    subsystem: Subsystem
    share: float  # fraction of reason features in anomalous windows


class HostSection(BaseModel):
    host: str
    n_windows: int = 0
    windows: list[AnomalyRecord] = Field(default_factory=list)
    intervals: list[tuple[int, int]] = Field(default_factory=list)
    breakdown: list[SubsystemShare] = Field(default_factory=list)
    anomalous_seconds: dict[str, float] = Field(default_factory=dict)

    def render(self, config: ReportRenderConfig) -> list[RenderBlock]:
        blocks: list[RenderBlock] = [
            HeaderBlock(
                text=f"Host {self.host}",
                level=2,
                suffix=f"({len(self.windows)} of {self.n_windows} windows anomalous)",
            )
        ]
        if not self.windows:
            blocks.append(TextBlock(text=NO_ANOMALIES, styles={Style.SUCCESS}))
            return blocks
        blocks.append(
            TableBlock(headers=TABLE_HEADERS, rows=[r.row(config) for r in self.windows])
        )
        spans = ", ".join(f"[{s / 1000:g}s, {e / 1000:g}s)" for s, e in self.intervals)
        blocks.append(KeyValueBlock(key="Intervals", value=spans))
        shares = ", ".join(f"{b.subsystem.value} {b.share:.0%}" for b in self.breakdown)
        blocks.append(KeyValueBlock(key="Subsystems", value=shares))
        top = sorted(self.anomalous_seconds.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
        if top:
            blocks.append(
                KeyValueBlock(
                    key="Anomalous seconds",
                    value=", ".join(f"{c} {s:g}s" for c, s in top),
                )
            )
        if config.show_evidence:
            blocks.append(TextBlock(text="Evidence:", styles={Style.BOLD}))
            for record in self.windows:
                blocks.extend(record.render_evidence())
        return blocks


class ReportDocument(BaseModel):
    mode: Literal["per-host", "aggregated"] = "per-host"
    window_spec: str = ""
    min_agreement: int = 1
    sections: list[HostSection] = Field(default_factory=list)
    cross_host: list[CrossHostFinding] = Field(default_factory=list)
    warnings: list[str] = Field(default_factory=list)

    def record_count(self) -> int:
        return sum(len(s.windows) for s in self.sections)

    def is_empty(self) -> bool:
        return self.record_count() == 0 and not self.cross_host

    def at_agreement(self, min_agreement: int) -> ReportDocument:
        """Copy keeping only records flagged by at least `min_agreement` methods.

        Intervals and breakdowns stay those of the original run.
        """
        sections = [
            s.model_copy(update={"windows": [r for r in s.windows if r.agreement >= min_agreement]})
            for s in self.sections
        ]
        return self.model_copy(update={"sections": sections, "min_agreement": min_agreement})

    def render(self, config: ReportRenderConfig | None = None) -> list[RenderBlock]:
        config = config or ReportRenderConfig()
        blocks: list[RenderBlock] = [
            HeaderBlock(text="Anomaly report", level=1, suffix=f"[{self.mode}]"),
            KeyValueBlock(key="Windows", value=self.window_spec or "-"),
            KeyValueBlock(key="Minimum agreement", value=str(self.min_agreement)),
        ]
        if self.is_empty():
            blocks.append(TextBlock(text=NO_ANOMALIES, styles={Style.SUCCESS}))
        for section in self.sections:
            blocks.append(SpacerBlock())
            blocks.extend(section.render(config))
        if self.mode == "aggregated":
            blocks.append(SpacerBlock())
            blocks.append(HeaderBlock(text="Cross-host imbalance", level=2))
            if not self.cross_host:
                blocks.append(TextBlock(text="No host deviates from the fleet."))
            for finding in self.cross_host:
                blocks.append(_render_finding(finding))
        if self.warnings:
            blocks.append(DividerBlock(styles={Style.DIM}))
            blocks.append(
                ListBlock(items=list(self.warnings), bullet="!", styles={Style.WARNING})
            )
        return blocks


def _render_finding(finding: CrossHostFinding) -> RenderBlock:
    unit = "raw difference" if finding.low_confidence else "robust sigma"
    parts = [
        f"{h} {finding.deviations[h]:.3g} {unit} (median {finding.host_medians[h]:.4g})"
        for h in finding.deviating_hosts
    ]
    note = " [low confidence: 2 hosts]" if finding.low_confidence else ""
    return KeyValueBlock(
        key=finding.channel,
        value="; ".join(parts) + note,
        styles={Style.WARNING} if finding.low_confidence else {Style.ANOMALY},
    )


# =============================================================================
# Building
# =============================================================================


def build_record(
    window: Window,
    attribution: Attribution,
    methods: list[Detector],
    registry: Registry,
    results: list[DetectorScores] | None = None,
    epoch: datetime | None = None,
) -> AnomalyRecord:
    ordered = [d for d in DETECTOR_ORDER if d in methods]
    claim = claim_for(attribution.reasons[0], registry)
    if attribution.low_confidence:
        claim += LOW_CONFIDENCE_NOTE
    evidence = Evidence(
        scores={r.detector.value: r.score_of(window.id) for r in results or []},
        thresholds={r.detector.value: r.threshold for r in results or []},
        pca_reasons=attribution.pca_reasons,
    )
    return AnomalyRecord(
        window_id=window.id,
        host=window.host,
        timestamp_ms=window.start_ms,
        wall_time=wall_clock(epoch, window.start_ms),
        methods=ordered,
        subsystems=map_subsystems(attribution.reasons, registry),
        reasons=attribution.reasons,
        claim=claim,
        agreement=len(ordered),
        low_confidence=attribution.low_confidence,
        evidence=evidence,
    )


def subsystem_breakdown(records: list[AnomalyRecord], registry: Registry) -> list[SubsystemShare]:
    """Share of reason features per subsystem, largest first."""
    counts: Counter[Subsystem] = Counter()
    for record in records:
        for reason in record.reasons:
            counts[map_subsystems([reason], registry)[0]] += 1
    total = sum(counts.values())
    if not total:
        return []
    return [
        SubsystemShare(subsystem=s, share=n / total)
        for s, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0].value))
    ]


def anomalous_seconds(records: list[AnomalyRecord], spec: WindowSpec) -> dict[str, float]:
    """Per channel, seconds covered by windows citing it as a reason."""
    spans: dict[str, list[tuple[int, int]]] = {}
    for record in records:
        for reason in record.reasons:
            spans.setdefault(reason.channel, []).append(
                (record.timestamp_ms, record.timestamp_ms + spec.size_ms)
            )
    return {
        channel: AnomalyIntervalSet.from_spans("", s).total_length() / 1000.0
        for channel, s in sorted(spans.items())
    }


def render_report(
    records: list[AnomalyRecord],
    intervals: list[AnomalyIntervalSet],
    findings: list[CrossHostFinding],
    mode: Literal["per-host", "aggregated"] = "per-host",
    registry: Registry | None = None,
    spec: WindowSpec | None = None,
    window_counts: dict[str, int] | None = None,
    min_agreement: int = 1,
    warnings: list[str] | None = None,
) -> ReportDocument:
    """Assemble the report document.

    Records below `min_agreement` are left out. Cross-host findings appear
    only in aggregated mode.
    """
    registry = registry or default_registry()
    spec = spec or WindowSpec()
    window_counts = window_counts or {}
    kept = [r for r in records if r.agreement >= min_agreement]

    hosts = sorted(
        {r.host for r in records} | {i.host for i in intervals} | set(window_counts)
    )
    by_host = {i.host: i for i in intervals}
    sections = []
    for host in hosts:
        host_records = sorted((r for r in kept if r.host == host), key=lambda r: r.window_id)
        interval_set = by_host.get(host, AnomalyIntervalSet(host))
        sections.append(
            HostSection(
                host=host,
                n_windows=window_counts.get(host, 0),
                windows=host_records,
                intervals=list(interval_set.intervals),
                breakdown=subsystem_breakdown(host_records, registry),
                anomalous_seconds=anomalous_seconds(host_records, spec),
            )
        )
    document = ReportDocument(
        mode=mode,
        window_spec=spec.label(),
        min_agreement=min_agreement,
        sections=sections,
        cross_host=list(findings) if mode == "aggregated" else [],
        warnings=list(warnings or []),
    )
    logger.info("report: %d record(s) over %d host(s)", document.record_count(), len(sections))
    return document


def format_report(
    document: ReportDocument,
    formatter: Formatter | None = None,
    config: ReportRenderConfig | None = None,
) -> str:
    return (formatter or PlainFormatter()).format(document.render(config))


def write_report(document: ReportDocument, out_dir: Path, stem: str = "report") -> list[Path]:
    """Write `<stem>.json` and the fixed-width `<stem>.txt`."""
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{stem}.json"
    text_path = out_dir / f"{stem}.txt"
    json_path.write_text(document.model_dump_json(indent=2) + "\n", encoding="utf-8")
    text_path.write_text(format_report(document), encoding="utf-8")
    return [json_path, text_path]


def load_report(path: Path) -> ReportDocument:
    return ReportDocument.model_validate_json(path.read_text(encoding="utf-8"))
