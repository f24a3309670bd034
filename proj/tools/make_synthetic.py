#!/usr/bin/env python3
"""Writes the synthetic scenarios under data/synthetic. Output is deterministic."""

import argparse
import json
import math
import random
from pathlib import Path

CAPACITY = 1000.0


def write_tntp(path, n_nodes, links):
    with open(path, "w") as out:
        out.write(f"<NUMBER OF NODES> {n_nodes}\n<NUMBER OF LINKS> {len(links)}\n<END OF METADATA>\n\n")
        out.write("~ tail head distance capacity ;\n")
        for tail, head, dist in links:
            out.write(f"{tail}\t{head}\t{dist:.4f}\t{CAPACITY:.0f}\t;\n")


def both_ways(pairs):
    links = []
    for a, b, d in pairs:
        links.append((a, b, d))
        links.append((b, a, d))
    return links


def grid(rows, cols, step):
    node = lambda r, c: r * cols + c + 1
    pairs = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                pairs.append((node(r, c), node(r, c + 1), step))
            if r + 1 < rows:
                pairs.append((node(r, c), node(r + 1, c), step))
    return both_ways(pairs)


def zone_cost(x, y, cx, cy, radius):
    dist = math.hypot(x - cx, y - cy)
    if dist <= radius:
        return 65.0
    if dist <= 2 * radius:
        return 50.0
    return 35.0


def scenario(name, net_file, nodes, demands, budget, alpha, routes=10):
    return {
        "name": name,
        "network_path": net_file,
        "distance_unit": "hours",
        "params": {"lambda": 25.12, "mu": 4, "pi": 1.2, "budget": budget, "alpha": alpha},
        "demands": [{"origin": o, "destination": d, "total_flow": f} for o, d, f in demands],
        "routes_per_od": routes,
        "nodes": nodes,
    }


def grid_scenario(name, rows, cols, demands, budget, alpha, out_dir):
    links = grid(rows, cols, 0.1)
    nodes = []
    for r in range(rows):
        for c in range(cols):
            t = zone_cost(c, r, (cols - 1) / 2, (rows - 1) / 2, max(rows, cols) / 6)
            nodes.append({"id": r * cols + c + 1, "electricity_price": 7.5, "site_cost": t})
    write_tntp(out_dir / f"{name}_net.tntp", rows * cols, links)
    return scenario(name, f"{name}_net.tntp", nodes, demands, budget, alpha)


def ring_scenario(out_dir):
    n = 16
    pairs = [(i + 1, (i + 1) % n + 1, 0.12) for i in range(n)]
    pairs += [(i + 1, (i + 4) % n + 1, 0.3) for i in range(0, n, 4)]
    pairs += [(1, 9, 0.45), (5, 13, 0.45)]
    write_tntp(out_dir / "ring16_net.tntp", n, both_ways(pairs))
    nodes = [{"id": i + 1, "electricity_price": 7.5 if i % 2 else 8.0, "site_cost": [35.0, 50.0, 65.0][i % 3]}
             for i in range(n)]
    demands = [(1, 9, 1200), (5, 13, 1100), (3, 12, 900), (16, 7, 1000)]
    return scenario("ring16", "ring16_net.tntp", nodes, demands, 150, 0.15)


def geometric_scenario(out_dir, seed):
    rng = random.Random(seed)
    n = 30
    pts = [(rng.random(), rng.random()) for _ in range(n)]
    pairs = set()
    for i in range(n):
        near = sorted(range(n), key=lambda j: math.dist(pts[i], pts[j]))[1:4]
        for j in near:
            pairs.add((min(i, j), max(i, j)))
    # Chain consecutive nodes so the graph is connected regardless of the draw.
    order = sorted(range(n), key=lambda i: pts[i])
    for a, b in zip(order, order[1:]):
        pairs.add((min(a, b), max(a, b)))
    links = both_ways([(a + 1, b + 1, round(0.05 + 0.6 * math.dist(pts[a], pts[b]), 4)) for a, b in sorted(pairs)])
    write_tntp(out_dir / "geo30_net.tntp", n, links)
    nodes = [{"id": i + 1, "electricity_price": 7.5, "site_cost": zone_cost(x, y, 0.5, 0.5, 0.2)}
             for i, (x, y) in enumerate(pts)]
    corner = lambda cx, cy: min(range(n), key=lambda i: math.dist(pts[i], (cx, cy))) + 1
    demands = [(corner(0, 0), corner(1, 1), 1200), (corner(1, 0), corner(0, 1), 1000),
               (corner(0, 0.5), corner(1, 0.5), 900)]
    return scenario("geo30", "geo30_net.tntp", nodes, demands, 120, 0.12)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data" / "synthetic")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    scenarios = {
        "grid6x6": grid_scenario("grid6x6", 6, 6, [(1, 36, 1200), (6, 31, 1000), (3, 34, 900)], 200, 0.15, args.out),
        "ring16": ring_scenario(args.out),
        "geo30": geometric_scenario(args.out, args.seed),
        "grid10x10": grid_scenario("grid10x10", 10, 10,
                                   [(1, 100, 1200), (10, 91, 1100), (5, 96, 1000), (41, 60, 900)], 250, 0.13,
                                   args.out),
    }
    for name, doc in scenarios.items():
        with open(args.out / f"{name}.json", "w") as out:
            json.dump(doc, out, indent=2)
            out.write("\n")


if __name__ == "__main__":
    main()
