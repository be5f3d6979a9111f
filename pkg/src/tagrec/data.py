"""Dataset manifest and tab-separated file loading.

A dataset is a directory described by a sectioned key=value manifest: node
counts, one TSV edge file per relation, metapath declarations as edge-name
chains, and three interaction split files. Loading validates every index
against the declared counts and reports failures with file and line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .graph import (
    TAG,
    USER,
    TARGET_ITEM,
    EdgeType,
    GraphBuilder,
    GraphSchemaError,
    GraphValidationError,
    HeteroGraph,
    MetapathSchema,
    NodeId,
    NodeType,
)
from .training import InteractionSplits


class DatasetError(ValueError):
    """Malformed manifest or data file; message names the file and line."""


SPLIT_NAMES = ("train", "validation", "test")


@dataclass
class EdgeFileSpec:
    name: str
    edge_type: EdgeType
    path: str  # relative to the manifest directory


@dataclass
class DatasetManifest:
    source_domains: int
    counts: dict[NodeType, int]
    edges: dict[str, EdgeFileSpec]
    metapaths: list[tuple[int, tuple[str, ...]]]
    splits: dict[str, str]
    base_dir: Path = field(default_factory=Path)

    def edge_path(self, name: str) -> Path:
        return self.base_dir / self.edges[name].path

    def split_path(self, name: str) -> Path:
        return self.base_dir / self.splits[name]

    def schemas(self) -> list[MetapathSchema]:
        return [
            MetapathSchema.from_edges(mp_id, [self.edges[n].edge_type for n in names])
            for mp_id, names in self.metapaths
        ]

    def to_text(self) -> str:
        lines = ["[graph]", f"source_domains = {self.source_domains}", "", "[counts]"]
        for node_type, count in self.counts.items():
            lines.append(f"{node_type.name} = {count}")
        lines.append("")
        lines.append("[edges]")
        for name, spec in self.edges.items():
            lines.append(f"{name} = {spec.edge_type.src.name} {spec.edge_type.dst.name} {spec.path}")
        lines.append("")
        lines.append("[metapaths]")
        for mp_id, names in self.metapaths:
            lines.append(f"{mp_id} = {' '.join(names)}")
        lines.append("")
        lines.append("[splits]")
        for name in SPLIT_NAMES:
            lines.append(f"{name} = {self.splits[name]}")
        return "\n".join(lines) + "\n"

    def write(self, path: Path | str) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def keyed_lines(path: Path) -> Iterator[tuple[int, str, str, str]]:
    """Yield (lineno, section, key, value); '#' starts a comment line."""
    section = ""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read ({exc})") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise DatasetError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise DatasetError(f"{path}:{lineno}: empty key")
        yield lineno, section, key, value


def parse_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    source_domains = 1
    counts: dict[NodeType, int] = {}
    edges: dict[str, EdgeFileSpec] = {}
    metapaths: list[tuple[int, tuple[str, ...]]] = []
    splits: dict[str, str] = {}
    for lineno, section, key, value in keyed_lines(path):
        where = f"{path}:{lineno}"
        if section == "graph":
            if key != "source_domains":
                raise DatasetError(f"{where}: unknown graph key {key!r}")
            source_domains = _parse_int(where, value)
        elif section == "counts":
            try:
                node_type = NodeType.parse(key)
            except GraphSchemaError as exc:
                raise DatasetError(f"{where}: {exc}") from None
            if node_type in counts:
                raise DatasetError(f"{where}: duplicate count for {key}")
            counts[node_type] = _parse_int(where, value)
        elif section == "edges":
            parts = value.split()
            if len(parts) != 3:
                raise DatasetError(f"{where}: edge needs 'src_type dst_type path'")
            if key in edges:
                raise DatasetError(f"{where}: duplicate edge name {key!r}")
            try:
                src = NodeType.parse(parts[0])
                dst = NodeType.parse(parts[1])
                edge_type = EdgeType(src, dst, symmetric=(src == TAG and dst == TAG))
            except GraphSchemaError as exc:
                raise DatasetError(f"{where}: {exc}") from None
            edges[key] = EdgeFileSpec(key, edge_type, parts[2])
        elif section == "metapaths":
            mp_id = _parse_int(where, key)
            names = tuple(value.split())
            if not names:
                raise DatasetError(f"{where}: metapath {mp_id} has no edges")
            metapaths.append((mp_id, names))
        elif section == "splits":
            if key not in SPLIT_NAMES:
                raise DatasetError(f"{where}: unknown split {key!r}")
            splits[key] = value
        else:
            raise DatasetError(f"{where}: unknown section [{section}]")
    if not counts:
        raise DatasetError(f"{path}: no [counts] section")
    for name in SPLIT_NAMES:
        if name not in splits:
            raise DatasetError(f"{path}: missing split {name!r}")
    metapaths.sort(key=lambda item: item[0])
    for want, (mp_id, names) in enumerate(metapaths):
        if mp_id != want:
            raise DatasetError(f"{path}: metapath ids must be dense from 0, got {mp_id}")
        for name in names:
            if name not in edges:
                raise DatasetError(f"{path}: metapath {mp_id} references unknown edge {name!r}")
    for node_type in counts:
        if node_type.domain > source_domains:
            raise DatasetError(
                f"{path}: node type {node_type.name} exceeds source_domains={source_domains}"
            )
    return DatasetManifest(
        source_domains=source_domains,
        counts=counts,
        edges=edges,
        metapaths=metapaths,
        splits=splits,
        base_dir=path.parent,
    )


def _parse_int(where: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise DatasetError(f"{where}: expected an integer, got {value!r}") from None


def _read_pairs(path: Path) -> Iterator[tuple[int, int, int]]:
    """Yield (lineno, left, right) from a two-column TSV."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read ({exc})") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetError(f"{path}:{lineno}: expected 'src<TAB>dst', got {raw!r}")
        try:
            yield lineno, int(parts[0]), int(parts[1])
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: non-integer index in {raw!r}") from None


def load_dataset(manifest_path: Path | str) -> tuple[HeteroGraph, InteractionSplits]:
    """Build the frozen graph and interaction splits a manifest describes."""
    manifest = parse_manifest(manifest_path)
    try:
        builder = GraphBuilder(
            manifest.counts,
            [spec.edge_type for spec in manifest.edges.values()],
            manifest.schemas(),
        )
    except GraphSchemaError as exc:
        raise DatasetError(f"{manifest_path}: {exc}") from None
    for spec in manifest.edges.values():
        path = manifest.edge_path(spec.name)
        for lineno, src, dst in _read_pairs(path):
            try:
                builder.add_edge(
                    spec.edge_type,
                    NodeId(spec.edge_type.src, src),
                    NodeId(spec.edge_type.dst, dst),
                )
            except (GraphSchemaError, GraphValidationError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    graph = builder.freeze()
    n_users = graph.node_count(USER)
    n_items = graph.node_count(TARGET_ITEM)
    split_pairs: dict[str, list[tuple[int, int]]] = {}
    for name in SPLIT_NAMES:
        path = manifest.split_path(name)
        pairs: list[tuple[int, int]] = []
        for lineno, user, item in _read_pairs(path):
            if not 0 <= user < n_users:
                raise DatasetError(f"{path}:{lineno}: user index {user} out of range [0, {n_users})")
            if not 0 <= item < n_items:
                raise DatasetError(f"{path}:{lineno}: item index {item} out of range [0, {n_items})")
            pairs.append((user, item))
        split_pairs[name] = pairs
    return graph, InteractionSplits(
        train=split_pairs["train"],
        validation=split_pairs["validation"],
        test=split_pairs["test"],
    )


def write_pairs(path: Path, pairs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in pairs:
            fh.write(f"{a}\t{b}\n")
