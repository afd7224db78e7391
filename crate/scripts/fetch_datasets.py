#!/usr/bin/env python3
"""Download small public networks and convert them to nmfcomm edge lists.

    python3 scripts/fetch_datasets.py DATA_DIR

Writes dolphins.edges, polbooks.edges and football.edges (plus a .part file
with the published node attribute where one exists) and prints their SHA-256
digests. Needs network access and networkx.
"""

import hashlib
import io
import sys
import urllib.request
import zipfile
from pathlib import Path

import networkx as nx

BASE = "http://www-personal.umich.edu/~mejn/netdata/"
DATASETS = {
    "dolphins": ("dolphins.zip", "dolphins.gml", None),
    "polbooks": ("polbooks.zip", "polbooks.gml", "value"),
    "football": ("football.zip", "football.gml", "value"),
}


def read_gml(text):
    # football.gml repeats edges, which read_gml rejects unless told to expect
    # a multigraph; the repeats are collapsed afterwards
    text = text.replace("graph\n[", "graph [", 1).replace("graph [", "graph [\n  multigraph 1", 1)
    return nx.Graph(nx.parse_gml(text, label="id"))


def convert(name, archive, member, attribute, out_dir):
    with urllib.request.urlopen(BASE + archive) as response:
        data = response.read()
    with zipfile.ZipFile(io.BytesIO(data)) as z:
        text = z.read(member).decode("utf-8", errors="replace")
    g = read_gml(text.replace("\r\n", "\n"))
    edges_path = out_dir / f"{name}.edges"
    with edges_path.open("w") as f:
        for u, v in sorted(tuple(sorted(e)) for e in g.edges()):
            if u != v:
                f.write(f"{u} {v}\n")
    if attribute is not None:
        labels = {}
        with (out_dir / f"{name}.part").open("w") as f:
            for node, value in sorted(g.nodes(data=attribute)):
                community = labels.setdefault(value, len(labels))
                f.write(f"{node} {community}\n")
    return edges_path


def main():
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    out_dir = Path(sys.argv[1])
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (archive, member, attribute) in DATASETS.items():
        path = convert(name, archive, member, attribute, out_dir)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        print(f"{digest}  {path.name}")


if __name__ == "__main__":
    main()
