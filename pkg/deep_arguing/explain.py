"""Explanation subgraphs filtered from a mined argumentation graph, with DOT and JSON export."""

import logging
from pathlib import Path
from typing import Iterable, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from deep_arguing.errors import ParameterError
from deep_arguing.qbaf import FullCasebase, QBAFBatch
from deep_arguing.semantics import StrengthTrace

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
NEW_CASE_KEY = "N"
DEFAULT_THRESHOLD = 0.25

EDGE_COLORS = {
    "attack": "#d62728",
    "support": "#2ca02c",
    "irrelevance-attack": "#9467bd",
}
EDGE_PEN_SCALE = 4.0
NODE_BORDER_SCALE = 3.0

RelationKind = Literal["attack", "support", "irrelevance-attack"]


class ExplanationNode(BaseModel):
    """A retained argument. ``index`` is its graph position; the new case has none."""

    key: str
    index: Optional[int] = None
    kind: Literal["case", "target", "new"]
    label: Optional[int] = None
    base_score: float
    source_id: str
    strength: float


class ExplanationEdge(BaseModel):
    source: str
    target: str
    weight: float
    kind: RelationKind


class ExplanationSubgraph(BaseModel):
    """Nodes and edges of the full graph that survive the class and weight filters."""

    schema_version: int = SCHEMA_VERSION
    row: int
    classes: list[int]
    threshold: float = Field(ge=0, le=1)
    predicted: int
    target_strengths: list[float]
    nodes: list[ExplanationNode] = Field(default_factory=list)
    edges: list[ExplanationEdge] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_edges(self) -> "ExplanationSubgraph":
        keys = {node.key for node in self.nodes}
        for edge in self.edges:
            if edge.source not in keys or edge.target not in keys:
                raise ValueError(f"edge {edge.source}->{edge.target} leaves the retained nodes")
            if abs(edge.weight) <= self.threshold:
                raise ValueError(f"edge {edge.source}->{edge.target} is below the threshold")
            from_new = edge.source == NEW_CASE_KEY
            if edge.kind == "support" and (edge.weight <= 0 or from_new):
                raise ValueError(f"support edge {edge.source}->{edge.target} has weight {edge.weight}")
            if edge.kind == "attack" and (edge.weight >= 0 or from_new):
                raise ValueError(f"attack edge {edge.source}->{edge.target} has weight {edge.weight}")
            if edge.kind == "irrelevance-attack" and (edge.weight >= 0 or not from_new):
                raise ValueError(f"irrelevance edge {edge.source}->{edge.target} is inconsistent")
        return self


def extract_explanation(
    qbaf: QBAFBatch,
    trace: StrengthTrace,
    fullcasebase: FullCasebase,
    new_case: int,
    class_filter: Optional[Iterable[int]] = None,
    threshold: float = DEFAULT_THRESHOLD,
) -> ExplanationSubgraph:
    """
    Keep the new case plus casebase and target nodes whose label is in
    ``class_filter``, and the edges among them with |weight| > ``threshold``.

    Weights are copied out of the mined matrices unchanged.
    """
    classes = sorted(set(range(fullcasebase.n_classes) if class_filter is None else class_filter))
    if not classes:
        raise ParameterError("class filter is empty")
    if any(c < 0 or c >= fullcasebase.n_classes for c in classes):
        raise ParameterError(f"class filter {classes} outside 0..{fullcasebase.n_classes - 1}")
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must lie in [0, 1], got {threshold}")
    if not 0 <= new_case < qbaf.batch_size:
        raise ParameterError(f"row {new_case} outside a batch of {qbaf.batch_size}")

    labels = fullcasebase.labels
    ids = fullcasebase.node_ids
    n_cases = len(fullcasebase.cases)
    A_cb = qbaf.A_cb.data
    A_N = qbaf.A_N.data[new_case]
    strengths = trace.S_final.data[new_case]
    retained = [i for i in range(qbaf.n) if labels[i] in classes]

    nodes = [
        ExplanationNode(
            key=str(i),
            index=i,
            kind="case" if i < n_cases else "target",
            label=int(labels[i]),
            base_score=float(qbaf.b_cb.data[i]),
            source_id=ids[i],
            strength=float(strengths[i]),
        )
        for i in retained
    ]
    b_new = float(qbaf.b_new.data[new_case])
    nodes.append(
        ExplanationNode(key=NEW_CASE_KEY, kind="new", base_score=b_new, source_id=f"new:{new_case}", strength=b_new)
    )

    edges = []
    for i in retained:
        for j in retained:
            w = float(A_cb[i, j])
            if abs(w) > threshold:
                edges.append(ExplanationEdge(source=str(i), target=str(j), weight=w, kind="attack" if w < 0 else "support"))
    for j in retained:
        w = float(A_N[j])
        if abs(w) > threshold:
            edges.append(ExplanationEdge(source=NEW_CASE_KEY, target=str(j), weight=w, kind="irrelevance-attack"))

    target_strengths = strengths[qbaf.target_indices]
    return ExplanationSubgraph(
        row=new_case,
        classes=classes,
        threshold=threshold,
        predicted=int(np.argmax(target_strengths)),
        target_strengths=target_strengths.tolist(),
        nodes=nodes,
        edges=edges,
    )


def attribute_list(attrs: dict) -> str:
    """Render a dict as a DOT attribute list: ``[ foo = "x", bar = "y" ]``."""
    return "[ " + ", ".join(f'{key} = "{_escape(value)}"' for key, value in attrs.items()) + " ]"


def _escape(value) -> str:
    return str(value).replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def _edge_color(kind: str, weight: float) -> str:
    alpha = int(round(255 * min(abs(weight), 1.0)))
    return f"{EDGE_COLORS[kind]}{alpha:02x}"


def _node_label(node: ExplanationNode) -> str:
    if node.kind == "new":
        head = f"new case {node.source_id.split(':', 1)[1]}"
    elif node.kind == "target":
        head = f"target {node.label}"
    else:
        head = f"{node.source_id} (class {node.label})"
    return f"{head}\nbase {node.base_score:.2f} / strength {node.strength:.2f}"


def export_dot(subgraph: ExplanationSubgraph, path: Optional[Path | str] = None) -> str:
    """
    Write the subgraph as a GraphViz digraph.

    Edges are red (attack), green (support) or purple (irrelevance attack),
    with pen width and color opacity proportional to |weight|. Node border
    width is proportional to the base score.
    """
    lines = ["digraph explanation {", "  rankdir = BT;", ""]
    for node in subgraph.nodes:
        attrs = {
            "label": _node_label(node),
            "shape": "box" if node.kind == "target" else "ellipse",
            "penwidth": f"{NODE_BORDER_SCALE * node.base_score:.4f}",
        }
        if node.kind == "new":
            attrs["style"] = "dashed"
        lines.append(f'  "{node.key}" {attribute_list(attrs)};')
    lines.append("")
    for edge in subgraph.edges:
        attrs = {
            "color": _edge_color(edge.kind, edge.weight),
            "penwidth": f"{EDGE_PEN_SCALE * abs(edge.weight):.4f}",
            "label": f"{edge.weight:.2f}",
        }
        lines.append(f'  "{edge.source}" -> "{edge.target}" {attribute_list(attrs)};')
    lines.append("}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
        logger.info(f"DOT explanation written to {path}")
    return text


def export_json(subgraph: ExplanationSubgraph, path: Optional[Path | str] = None) -> str:
    text = subgraph.model_dump_json(indent=2)
    if path is not None:
        Path(path).write_text(text)
        logger.info(f"JSON explanation written to {path}")
    return text


def load_explanation_json(source: Path | str) -> ExplanationSubgraph:
    """Parse an exported explanation from a path or a JSON string."""
    text = source.read_text() if isinstance(source, Path) else source
    subgraph = ExplanationSubgraph.model_validate_json(text)
    if subgraph.schema_version != SCHEMA_VERSION:
        raise ParameterError(f"unsupported explanation schema version {subgraph.schema_version}")
    return subgraph
