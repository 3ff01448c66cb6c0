"""Builders and random scenario generators shared by the test modules."""

from __future__ import annotations

import random
from typing import Dict, List

from shiftsim.scenario import scenario_from_dict
from shiftsim.servicemodel import validate_service
from shiftsim.topology import build_infrastructure


def node(nid, cpu=10, mem=100):
    return {"id": nid, "cpu": cpu, "mem": mem}


def link(lid, a, b, bw=1000, latency=1):
    return {"id": lid, "a": a, "b": b, "bw": bw, "latency_ms": latency}


def vnf(vid, cpu=1, mem=1, proc=1):
    return {"id": vid, "cpu": cpu, "mem": mem, "proc_ms": proc}


def graph(level, vnfs, vlinks=(), revenue=None, utility=None, kpi=1000):
    return {
        "level": level,
        "utility": utility if utility is not None else 1.0 / (level + 1),
        "revenue_per_h": revenue if revenue is not None else 100.0 / (level + 1),
        "kpi_max_delay_ms": kpi,
        "vnfs": list(vnfs),
        "vlinks": [{"src": s, "dst": d, "bw": bw} for s, d, bw in vlinks],
    }


def service_doc(sid, catalog, graphs, vertical=None, priority=0, popularity=100,
                max_fraction=1.0, window=3600, penalty=10, outage_rate=0.0, rules=None):
    doc = {
        "id": sid, "vertical": vertical or f"v-{sid}", "priority": priority, "popularity": popularity,
        "sla": {"max_secondary_fraction": max_fraction, "window_s": window,
                "violation_penalty": penalty, "outage_penalty_rate": outage_rate},
        "vnfs": catalog, "graphs": graphs,
    }
    if rules:
        doc["alert_rules"] = rules
    return doc


def spec(sid, catalog, graphs, **kw):
    return validate_service(service_doc(sid, catalog, graphs, **kw))


def infra(nodes, links=()):
    return build_infrastructure({"nodes": list(nodes), "links": list(links)})


def scenario(nodes, links, services, events=(), duration=600, sid="generated"):
    doc = {
        "infrastructure": {"nodes": list(nodes), "links": list(links)},
        "services": list(services),
        "events": list(events),
        "duration_s": duration,
    }
    return scenario_from_dict(doc, sid)


# --- random instances -------------------------------------------------------


def _connected_links(rng: random.Random, names: List[str], bw_range, extra: float):
    links = []
    for i in range(1, len(names)):
        links.append((names[rng.randrange(i)], names[i]))
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            if (names[i], names[j]) not in links and (names[j], names[i]) not in links and rng.random() < extra:
                links.append((names[i], names[j]))
    return [link(f"l{k}", a, b, bw=rng.choice(bw_range), latency=rng.randint(1, 3))
            for k, (a, b) in enumerate(links)]


def _random_service(rng: random.Random, sid: str, max_graphs: int, max_vnfs: int, **kw) -> dict:
    pool = [f"f{i}" for i in range(2 * max_vnfs)]
    catalog = [vnf(v, cpu=rng.randint(1, 4), mem=rng.randint(1, 3), proc=rng.randint(1, 3)) for v in pool]
    n_graphs = rng.randint(1, max_graphs)
    revenue = float(rng.randint(20, 60))
    graphs = []
    for level in range(n_graphs):
        k = rng.randint(1, max_vnfs)
        chosen = sorted(rng.sample(pool, k))
        vlinks = [(chosen[i], chosen[i + 1], rng.choice([1, 2, 5])) for i in range(len(chosen) - 1)]
        graphs.append(graph(level, chosen, vlinks, revenue=revenue, utility=1.0 - 0.3 * level,
                            kpi=kw.pop("kpi", 1000) if level == 0 else 1000))
        revenue = max(1.0, revenue - rng.randint(1, 15))
    used = {v for g in graphs for v in g["vnfs"]}
    catalog = [c for c in catalog if c["id"] in used]
    return service_doc(sid, catalog, graphs, **kw)


def oracle_instance(seed: int):
    """A small instance whose primary graphs fit, plus one node failure that persists."""
    rng = random.Random(seed)
    while True:
        n_nodes = rng.randint(2, 4)
        names = [f"n{i}" for i in range(n_nodes)]
        nodes = [node(n, cpu=rng.randint(3, 9), mem=50) for n in names]
        links = _connected_links(rng, names, [100, 200], 0.6)
        services = [_random_service(rng, f"s{i}", 2, 3, penalty=rng.randint(1, 50))
                    for i in range(rng.randint(1, 3))]
        try:
            sc = scenario(nodes, links, services, duration=2400, sid=f"oracle-{seed}")
        except Exception:
            continue
        from shiftsim.simengine import Simulation
        from shiftsim.errors import ScenarioInfeasibleAtStart
        try:
            sim = Simulation(sc, seed, "payoff")
        except ScenarioInfeasibleAtStart:
            continue
        hosting = sorted({n for d in sim.deployments.values() for n in d.placement.vnf_map.values()})
        if len(hosting) < 2 and n_nodes > 1:
            victim = hosting[0]
        else:
            victim = rng.choice(hosting)
        events = [{"t": 100, "kind": "fail", "args": {"element": victim}}]
        return scenario(nodes, links, services, events, duration=2400, sid=f"oracle-{seed}"), victim


def fuzz_scenario(seed: int, duration: int = 3600):
    """A shortage-heavy scenario: shared verticals with priorities, budgets,
    batched failures, recoveries and load surges."""
    rng = random.Random(seed)
    from shiftsim.simengine import Simulation
    from shiftsim.errors import ScenarioInfeasibleAtStart
    while True:
        n_nodes = rng.randint(3, 5)
        names = [f"n{i}" for i in range(n_nodes)]
        nodes = [node(n, cpu=rng.randint(6, 12), mem=60) for n in names]
        links = _connected_links(rng, names, [60, 100, 200], 0.5)
        verticals = ["va", "vb"]
        services = []
        for i in range(rng.randint(3, 5)):
            penalty = "SAFETY" if rng.random() < 0.15 else rng.randint(5, 200)
            services.append(_random_service(
                rng, f"s{i}", 3, 3, vertical=rng.choice(verticals), priority=rng.randint(0, 3),
                popularity=rng.randint(10, 1000), max_fraction=rng.choice([0.2, 0.4, 0.6, 1.0]),
                window=rng.choice([1200, 1800, 3600]), penalty=penalty, outage_rate=0.01,
                kpi=rng.choice([30, 60, 1000])))
        events = []
        t = rng.randint(60, 300)
        down = set()
        while t < duration - 60:
            r = rng.random()
            if r < 0.45:
                candidates = [n for n in names if n not in down]
                if len(candidates) > 1:
                    for n in rng.sample(candidates, rng.randint(1, min(2, len(candidates) - 1))):
                        events.append({"t": t, "kind": "fail", "args": {"element": n}})
                        down.add(n)
            elif r < 0.75 and down:
                n = rng.choice(sorted(down))
                events.append({"t": t, "kind": "recover", "args": {"element": n}})
                down.discard(n)
            else:
                s = rng.choice(services)["id"]
                events.append({"t": t, "kind": "load", "args": {"service": s,
                                                                "factor": rng.choice([1.0, 1.3, 1.6])}})
            t += rng.randint(30, 200)
        try:
            sc = scenario(nodes, links, services, events, duration=duration, sid=f"fuzz-{seed}")
            Simulation(sc, seed, "payoff")
        except (ScenarioInfeasibleAtStart, ValueError):
            continue
        return sc


def level_timeline(events_lines: List[str], services: List[str]) -> List[tuple]:
    """(t_ms, {service: level}) snapshots rebuilt from plan records of an event log."""
    levels: Dict[str, int] = {s: 0 for s in services}
    out = [(0, dict(levels))]
    for line in events_lines:
        t, kind, subject, detail = line.split(",", 3)
        if kind != "plan":
            continue
        fields = dict(kv.split("=", 1) for kv in detail.split(";"))
        sec, ms = t.split(".")
        levels[subject] = int(fields["to_level"])
        out.append((int(sec) * 1000 + int(ms), dict(levels)))
    return out
