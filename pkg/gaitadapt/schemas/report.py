"""Backtest report: retrieval scores per (training step, test set)."""

from __future__ import annotations

import csv
import io
import math

import numpy as np
from pydantic import BaseModel, Field

from gaitadapt.schemas.common import ProtocolTag

ALL_CONDITIONS = "all"
TARGET_SET = "target"
UNION_PROTOCOL = "union"
CSV_COLUMNS = ["step", "test_set", "protocol", "condition", "rank1", "mAP", "probes", "absent"]


class RetrievalScore(BaseModel):
    """Rank-1 and mAP (both percentages) over a probe set."""

    rank1: float = Field(ge=0.0, le=100.0)
    mean_ap: float = Field(ge=0.0, le=100.0)
    probes: int = Field(ge=0)
    absent: int = Field(default=0, ge=0)  # probes whose identity is not in the gallery


class EvalRow(BaseModel):
    """Evaluation of the model after one training step."""

    step: int
    results: dict[str, dict[str, RetrievalScore]]  # test set -> condition -> score
    target: RetrievalScore


class EvalReport(BaseModel):
    """
    Lower-triangular accuracy matrix plus derived summaries.

    `source` is the rank-1 on the first trained test set; `target` is the
    rank-1 of union retrieval over every trained test set seen so far.
    """

    rows: list[EvalRow] = Field(default_factory=list)
    test_sets: dict[str, ProtocolTag] = Field(default_factory=dict)

    @property
    def source_set(self) -> str | None:
        for name, protocol in self.test_sets.items():
            if protocol is not ProtocolTag.UNSEEN:
                return name
        return None

    def source(self, row: EvalRow) -> float | None:
        name = self.source_set
        if name is None or name not in row.results:
            return None
        return row.results[name][ALL_CONDITIONS].rank1

    def per_domain_average(self, row: EvalRow) -> float | None:
        """Mean rank-1 over the trained test sets evaluated in `row`."""
        values = [
            conditions[ALL_CONDITIONS].rank1
            for name, conditions in row.results.items()
            if self.test_sets.get(name) is not ProtocolTag.UNSEEN
        ]
        return float(np.mean(values)) if values else None

    @property
    def final(self) -> EvalRow | None:
        return self.rows[-1] if self.rows else None

    @property
    def source_accuracy(self) -> float | None:
        return self.source(self.final) if self.final else None

    @property
    def target_accuracy(self) -> float | None:
        return self.final.target.rank1 if self.final else None

    @property
    def average_accuracy(self) -> float | None:
        """Mean rank-1 over every test set evaluated after the final step."""
        if self.final is None:
            return None
        values = [c[ALL_CONDITIONS].rank1 for c in self.final.results.values()]
        return float(np.mean(values)) if values else None

    def accuracy_matrix(self) -> np.ndarray:
        """Rank-1 by (row, test set); NaN where a set was not evaluated."""
        names = list(self.test_sets)
        matrix = np.full((len(self.rows), len(names)), np.nan)
        for i, row in enumerate(self.rows):
            for j, name in enumerate(names):
                if name in row.results:
                    matrix[i, j] = row.results[name][ALL_CONDITIONS].rank1
        return matrix

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            for name, protocol in self.test_sets.items():
                for condition, score in row.results.get(name, {}).items():
                    writer.writerow(_score_cells(row.step, name, protocol.value, condition, score))
            writer.writerow(
                _score_cells(row.step, TARGET_SET, UNION_PROTOCOL, ALL_CONDITIONS, row.target)
            )
        return buffer.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> EvalReport:
        reader = csv.DictReader(io.StringIO(text))
        test_sets: dict[str, ProtocolTag] = {}
        results: dict[int, dict[str, dict[str, RetrievalScore]]] = {}
        targets: dict[int, RetrievalScore] = {}
        for record in reader:
            step = int(record["step"])
            score = RetrievalScore(
                rank1=float(record["rank1"]),
                mean_ap=float(record["mAP"]),
                probes=int(record["probes"]),
                absent=int(record["absent"]),
            )
            results.setdefault(step, {})
            if record["protocol"] == UNION_PROTOCOL:
                targets[step] = score
                continue
            name = record["test_set"]
            test_sets.setdefault(name, ProtocolTag(record["protocol"]))
            results[step].setdefault(name, {})[record["condition"]] = score
        rows = [
            EvalRow(step=step, results=results[step], target=targets[step])
            for step in sorted(results)
        ]
        # Trained sets keep their stream order ahead of evaluation-only sets
        ordered = sorted(test_sets.items(), key=lambda item: item[1] is ProtocolTag.UNSEEN)
        return cls(rows=rows, test_sets=dict(ordered))

    def to_markdown(self) -> str:
        names = list(self.test_sets)
        lines = [
            "| step | " + " | ".join(names) + " | source | target | per-domain avg |",
            "|---" * (len(names) + 4) + "|",
        ]
        for row in self.rows:
            cells = [
                _fmt(row.results[n][ALL_CONDITIONS].rank1) if n in row.results else ""
                for n in names
            ]
            lines.append(
                f"| {row.step} | "
                + " | ".join(cells)
                + f" | {_fmt(self.source(row))} | {_fmt(row.target.rank1)}"
                + f" | {_fmt(self.per_domain_average(row))} |"
            )

        final = self.final
        if final is not None:
            lines += ["", f"Conditions after step {final.step} (rank-1 / mAP):", ""]
            lines.append("| test set | condition | rank-1 | mAP | probes | absent |")
            lines.append("|---|---|---|---|---|---|")
            for name, conditions in final.results.items():
                for condition, score in conditions.items():
                    lines.append(
                        f"| {name} | {condition} | {_fmt(score.rank1)} | {_fmt(score.mean_ap)}"
                        f" | {score.probes} | {score.absent} |"
                    )
            absent = sum(c[ALL_CONDITIONS].absent for c in final.results.values())
            if absent:
                lines += ["", f"{absent} probe(s) have no gallery entry of their identity."]
            lines += ["", f"Average accuracy: {_fmt(self.average_accuracy)}"]
        return "\n".join(lines) + "\n"


def _score_cells(
    step: int, name: str, protocol: str, condition: str, score: RetrievalScore
) -> list[str]:
    return [
        str(step),
        name,
        protocol,
        condition,
        repr(float(score.rank1)),
        repr(float(score.mean_ap)),
        str(score.probes),
        str(score.absent),
    ]


def _fmt(value: float | None) -> str:
    if value is None or math.isnan(value):
        return "-"
    return f"{value:.2f}"
