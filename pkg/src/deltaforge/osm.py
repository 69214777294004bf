"""OSM entity construction and OSM XML / GeoJSON serialization.

Output is an editable candidate file: every entity gets a fresh negative id
and the root element carries upload="false". Nodes are deduplicated at OSM's
coordinate resolution (1e-7 degrees).
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import NotGeoreferenced, UnmappedClass
from .vectorize import shoelace_area2

GENERATOR = "deltaforge"
MAX_WAY_REFS = 2000
_Q = 10_000_000  # 1e-7 degree quantization

# Default class-name -> tags mapping; "area" covers polygons, "line" covers
# line and skeleton features, "point" covers bare points. Operators should
# review and override via a tagmap JSON file of the same shape.
DEFAULT_TAGMAP = {
    "water": {
        "area": {"natural": "water"},
        "line": {"waterway": "stream"},
        "point": {"natural": "water"},
    },
    "vegetation": {
        "area": {"natural": "wood"},
        "line": {"natural": "tree_row"},
        "point": {"natural": "tree"},
    },
    "grass": {
        "area": {"natural": "grassland"},
        "point": {"natural": "grassland"},
    },
    "soil": {
        "area": {"natural": "bare_rock"},
        "point": {"natural": "bare_rock"},
    },
}


def load_tagmap(path) -> dict:
    return json.loads(Path(path).read_text())


@dataclass
class OsmNode:
    id: int
    lat: float
    lon: float
    tags: Dict[str, str] = field(default_factory=dict)


@dataclass
class OsmWay:
    id: int
    refs: List[int]
    tags: Dict[str, str] = field(default_factory=dict)


@dataclass
class OsmRelation:
    id: int
    members: List[Tuple[str, int, str]]  # (type, ref, role)
    tags: Dict[str, str] = field(default_factory=dict)


@dataclass
class OsmDocument:
    nodes: List[OsmNode] = field(default_factory=list)
    ways: List[OsmWay] = field(default_factory=list)
    relations: List[OsmRelation] = field(default_factory=list)


@dataclass(frozen=True)
class WorldFeature:
    """A stored feature georeferenced to lon/lat, ready for export."""

    id: str
    kind: str  # point|line|polygon|skeleton
    class_id: int
    class_name: str
    stage: str
    version: int
    geometry: dict  # GeoJSON geometry in lon/lat


def _tags_for(feature: WorldFeature, tagmap: dict) -> Dict[str, str]:
    entry = tagmap.get(feature.class_name)
    if entry is None:
        raise UnmappedClass(f"class {feature.class_name!r} missing from tagmap")
    group = {"polygon": "area", "line": "line", "skeleton": "line",
             "point": "point"}[feature.kind]
    tags = entry.get(group)
    if not tags:
        raise UnmappedClass(
            f"class {feature.class_name!r} has no {group!r} tags in tagmap"
        )
    return dict(tags)


def _check_lonlat(geometry: dict) -> None:
    def walk(coords):
        if isinstance(coords[0], (int, float)):
            lon, lat = coords
            if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
                raise NotGeoreferenced(
                    f"coordinate ({lon}, {lat}) is not a lon/lat pair"
                )
        else:
            for c in coords:
                walk(c)
    walk(geometry["coordinates"])


class _NodePool:
    def __init__(self):
        self.by_coord: Dict[Tuple[int, int], OsmNode] = {}
        self.order: List[OsmNode] = []

    def node(self, lon: float, lat: float) -> OsmNode:
        key = (round(lat * _Q), round(lon * _Q))
        node = self.by_coord.get(key)
        if node is None:
            node = OsmNode(id=-(len(self.order) + 1),
                           lat=key[0] / _Q, lon=key[1] / _Q)
            self.by_coord[key] = node
            self.order.append(node)
        return node


def _split_refs(refs: List[int]) -> List[List[int]]:
    """Split long ref lists into chunks of <= MAX_WAY_REFS sharing endpoints."""
    if len(refs) <= MAX_WAY_REFS:
        return [refs]
    chunks = []
    start = 0
    while start < len(refs) - 1:
        end = min(start + MAX_WAY_REFS - 1, len(refs) - 1)
        chunks.append(refs[start:end + 1])
        start = end
    return chunks


def build_osm_doc(
    features: Sequence[WorldFeature],
    tagmap: Optional[dict] = None,
    include_points: bool = False,
) -> OsmDocument:
    """Assemble nodes/ways/relations from lon/lat features.

    Polygons without holes become one closed tagged way; polygons with holes
    (or rings needing a split) become untagged ways plus a multipolygon
    relation carrying the tags. Lines and skeletons become open tagged ways.
    """
    tagmap = DEFAULT_TAGMAP if tagmap is None else tagmap
    pool = _NodePool()
    ways: List[OsmWay] = []
    relations: List[OsmRelation] = []

    for feature in sorted(features, key=lambda f: f.id):
        _check_lonlat(feature.geometry)
        tags = _tags_for(feature, tagmap)
        geom = feature.geometry
        if feature.kind == "point":
            if not include_points:
                continue
            lon, lat = geom["coordinates"]
            node = pool.node(lon, lat)
            node.tags.update(tags)
        elif feature.kind in ("line", "skeleton"):
            refs = [pool.node(lon, lat).id for lon, lat in geom["coordinates"]]
            refs = _dedupe_consecutive(refs)
            if len(refs) < 2:
                continue
            for chunk in _split_refs(refs):
                ways.append(OsmWay(id=-(len(ways) + 1), refs=chunk, tags=dict(tags)))
        elif feature.kind == "polygon":
            ring_refs = []
            for ring in geom["coordinates"]:
                refs = [pool.node(lon, lat).id for lon, lat in ring]
                refs = _dedupe_consecutive(refs)
                if refs[0] != refs[-1]:
                    refs.append(refs[0])
                ring_refs.append(refs)
            needs_relation = len(ring_refs) > 1 or any(
                len(r) > MAX_WAY_REFS for r in ring_refs
            )
            if not needs_relation:
                ways.append(OsmWay(id=-(len(ways) + 1), refs=ring_refs[0],
                                   tags=dict(tags)))
            else:
                members: List[Tuple[str, int, str]] = []
                for i, refs in enumerate(ring_refs):
                    role = "outer" if i == 0 else "inner"
                    for chunk in _split_refs(refs):
                        way = OsmWay(id=-(len(ways) + 1), refs=chunk)
                        ways.append(way)
                        members.append(("way", way.id, role))
                rel_tags = dict(tags)
                rel_tags["type"] = "multipolygon"
                relations.append(OsmRelation(id=-(len(relations) + 1),
                                             members=members, tags=rel_tags))
        else:
            raise ValueError(f"unknown feature kind {feature.kind!r}")

    return OsmDocument(nodes=pool.order, ways=ways, relations=relations)


def _dedupe_consecutive(refs: List[int]) -> List[int]:
    out = [refs[0]]
    for r in refs[1:]:
        if r != out[-1]:
            out.append(r)
    return out


def _xml_escape(value: str) -> str:
    return (
        value.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def serialize_osm_xml(doc: OsmDocument) -> str:
    lines = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<osm version="0.6" generator="{GENERATOR}" upload="false">']
    for node in doc.nodes:
        attrs = f'id="{node.id}" lat="{node.lat:.7f}" lon="{node.lon:.7f}"'
        if node.tags:
            lines.append(f"  <node {attrs}>")
            for k in sorted(node.tags):
                lines.append(
                    f'    <tag k="{_xml_escape(k)}" v="{_xml_escape(node.tags[k])}"/>'
                )
            lines.append("  </node>")
        else:
            lines.append(f"  <node {attrs}/>")
    for way in doc.ways:
        lines.append(f'  <way id="{way.id}">')
        for ref in way.refs:
            lines.append(f'    <nd ref="{ref}"/>')
        for k in sorted(way.tags):
            lines.append(
                f'    <tag k="{_xml_escape(k)}" v="{_xml_escape(way.tags[k])}"/>'
            )
        lines.append("  </way>")
    for rel in doc.relations:
        lines.append(f'  <relation id="{rel.id}">')
        for mtype, ref, role in rel.members:
            lines.append(f'    <member type="{mtype}" ref="{ref}" role="{role}"/>')
        for k in sorted(rel.tags):
            lines.append(
                f'    <tag k="{_xml_escape(k)}" v="{_xml_escape(rel.tags[k])}"/>'
            )
        lines.append("  </relation>")
    lines.append("</osm>")
    return "\n".join(lines) + "\n"


def write_osm_xml(doc: OsmDocument, path) -> None:
    path = Path(path)
    try:
        path.write_text(serialize_osm_xml(doc), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write OSM XML to {path}: {exc}") from exc


def parse_osm_xml(path) -> OsmDocument:
    """Read back our own OSM XML (round-trip/lint support)."""
    root = ET.parse(str(path)).getroot()
    doc = OsmDocument()
    for el in root:
        tags = {t.get("k"): t.get("v") for t in el.findall("tag")}
        if el.tag == "node":
            doc.nodes.append(OsmNode(
                id=int(el.get("id")), lat=float(el.get("lat")),
                lon=float(el.get("lon")), tags=tags,
            ))
        elif el.tag == "way":
            doc.ways.append(OsmWay(
                id=int(el.get("id")),
                refs=[int(nd.get("ref")) for nd in el.findall("nd")],
                tags=tags,
            ))
        elif el.tag == "relation":
            doc.relations.append(OsmRelation(
                id=int(el.get("id")),
                members=[
                    (m.get("type"), int(m.get("ref")), m.get("role"))
                    for m in el.findall("member")
                ],
                tags=tags,
            ))
    return doc


def lint_osm_file(path) -> List[str]:
    """Referential-integrity and node-dedup checks; returns problem strings."""
    doc = parse_osm_xml(path)
    problems = []
    node_ids = {n.id for n in doc.nodes}
    way_ids = {w.id for w in doc.ways}
    if len(node_ids) != len(doc.nodes):
        problems.append("duplicate node ids")
    if len(way_ids) != len(doc.ways):
        problems.append("duplicate way ids")
    coords = {}
    for n in doc.nodes:
        key = (round(n.lat * _Q), round(n.lon * _Q))
        if key in coords:
            problems.append(
                f"nodes {coords[key]} and {n.id} share quantized position {key}"
            )
        coords[key] = n.id
    for w in doc.ways:
        if len(w.refs) > MAX_WAY_REFS:
            problems.append(f"way {w.id} has {len(w.refs)} refs")
        for ref in w.refs:
            if ref not in node_ids:
                problems.append(f"way {w.id} references missing node {ref}")
    for rel in doc.relations:
        for mtype, ref, role in rel.members:
            pool = node_ids if mtype == "node" else way_ids
            if ref not in pool:
                problems.append(
                    f"relation {rel.id} references missing {mtype} {ref}"
                )
            if mtype == "way" and role not in ("outer", "inner"):
                problems.append(f"relation {rel.id} member role {role!r}")
    return problems


def write_geojson(features: Sequence[WorldFeature], path) -> None:
    """RFC 7946 FeatureCollection; exteriors CCW, holes CW (lon/lat axes)."""
    out = {"type": "FeatureCollection", "features": []}
    for feature in sorted(features, key=lambda f: f.id):
        _check_lonlat(feature.geometry)
        geom = feature.geometry
        if geom["type"] == "Polygon":
            rings = []
            for i, ring in enumerate(geom["coordinates"]):
                area2 = shoelace_area2([tuple(p) for p in ring])
                want_ccw = i == 0
                if (area2 > 0) != want_ccw:
                    ring = list(reversed(ring))
                rings.append([list(p) for p in ring])
            geom = {"type": "Polygon", "coordinates": rings}
        out["features"].append({
            "type": "Feature",
            "geometry": geom,
            "properties": {
                "class": feature.class_name,
                "class_id": feature.class_id,
                "stage": feature.stage,
                "version": feature.version,
            },
        })
    Path(path).write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")
