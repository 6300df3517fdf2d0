#!/usr/bin/env python3
"""Download the WebKB graphs (texas, cornell, wisconsin) and convert them
to the edge/feature/label file formats this project reads.

Usage: python3 tools/fetch_webkb.py [--out data]

Requires network access to raw.githubusercontent.com. The processed files
land in <out>/<name>/{edges.tsv,features.csv,labels.csv}.
"""

import argparse
import pathlib
import urllib.request

BASE = ("https://raw.githubusercontent.com/graphdml-uiuc-jlu/geom-gcn/"
        "master/new_data/{name}/{file}")
DATASETS = ("texas", "cornell", "wisconsin")


def fetch(name: str, out_dir: pathlib.Path) -> None:
    out = out_dir / name
    out.mkdir(parents=True, exist_ok=True)

    def get(file: str) -> str:
        url = BASE.format(name=name, file=file)
        print(f"  {url}")
        with urllib.request.urlopen(url) as resp:
            return resp.read().decode("utf-8")

    node_text = get("out1_node_feature_label.txt")
    edge_text = get("out1_graph_edges.txt")

    features = []
    labels = []
    for line in node_text.strip().splitlines()[1:]:  # header: node_id feature label
        node_id, feat, label = line.split("\t")
        assert int(node_id) == len(features), "node ids must be dense and ordered"
        features.append(feat.split(","))
        labels.append(int(label))

    with open(out / "features.csv", "w") as f:
        for row in features:
            f.write(",".join(row) + "\n")
    with open(out / "labels.csv", "w") as f:
        for i, label in enumerate(labels):
            f.write(f"{i},{label}\n")
    with open(out / "edges.tsv", "w") as f:
        for line in edge_text.strip().splitlines()[1:]:  # header: id id
            u, v = line.split("\t")
            f.write(f"{u}\t{v}\n")
    print(f"  wrote {out}/ ({len(features)} nodes)")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data", type=pathlib.Path)
    args = parser.parse_args()
    for name in DATASETS:
        print(f"fetching {name} ...")
        fetch(name, args.out)


if __name__ == "__main__":
    main()
