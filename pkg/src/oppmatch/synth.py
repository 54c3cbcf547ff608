"""Seeded synthetic catalogs, opportunity snapshots and daily mutations.

Document filter fields are assigned by stratification rather than iid draws:
each field gets an exact share of wildcards (absent values) and the rest is
spread evenly over the vocabulary, then shuffled independently per field.
That pins the realized filter pass-rate close to its analytic value.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Sequence

from .catalog import format_timestamp, normalize_field, write_jsonl
from .errors import InvalidConfig

# solution area -> (products, sales plays)
PORTFOLIO: dict[str, tuple[list[str], list[str]]] = {
    "Data & AI": (
        ["Fabric", "Azure OpenAI", "Azure SQL", "Power BI"],
        [
            "unify the data estate with an analytics platform",
            "build generative ai copilots on trusted enterprise data",
            "migrate legacy databases and modernize data workloads",
        ],
    ),
    "Business Applications": (
        ["Dynamics 365 Finance", "Power Apps", "Dynamics 365 Sales", "Power Automate"],
        [
            "accelerate innovation with low code",
            "optimize finance and supply chain",
            "transform customer engagement across every sales channel",
        ],
    ),
    "Modern Work": (
        ["Microsoft 365 E5", "Teams Premium", "Copilot for Microsoft 365"],
        [
            "enable secure hybrid work and frontline collaboration",
            "boost employee productivity with everyday assistants",
            "consolidate meetings calling and messaging platforms",
        ],
    ),
    "Security": (
        ["Defender XDR", "Sentinel", "Entra ID", "Purview"],
        [
            "modernize security operations with threat intelligence",
            "protect identities and access with zero trust",
            "govern and protect sensitive information everywhere",
        ],
    ),
    "Infrastructure": (
        ["Azure Virtual Machines", "Azure Kubernetes Service", "Azure Arc"],
        [
            "migrate and modernize windows server estates",
            "innovate with cloud native applications on containers",
            "manage hybrid and multicloud environments centrally",
        ],
    ),
}

SALES_STAGES = ["Listen & Consult", "Inspire & Design", "Empower & Achieve", "Realize Value", "Manage & Optimize"]
AREAS = ["Western Europe", "United States", "Asia", "Latin America", "Middle East & Africa", "Canada"]
SEGMENTS = ["Enterprise", "SMB", "Corporate", "Public Sector"]
CUSTOMERS = [
    "Contoso", "Fabrikam", "Northwind", "Tailspin", "Woodgrove", "Adventure Works",
    "Litware", "Proseware", "Wide World Importers", "Alpine Ski House",
]
SUFFIXES = ["expansion", "migration", "renewal", "pilot", "deployment", "upgrade"]
DOC_KINDS = {
    "pitch deck": True,
    "customer success story": True,
    "battle card": False,
    "technical overview": True,
    "solution brief": True,
    "internal enablement guide": False,
}

INDUSTRIES = [
    "retail", "healthcare", "manufacturing", "financial services", "education",
    "energy", "telecommunications", "automotive", "media", "government",
]
AUDIENCES = ["executives", "architects", "developers", "partners", "decision makers"]

# words that never occur in generated catalog text; pads graded queries
FILLER = [
    "quarterly", "review", "budget", "timeline", "stakeholder", "procurement", "contract", "legal",
    "kickoff", "workshop", "signoff", "invoice", "headcount", "roadmap", "escalation", "forecast",
    "approval", "meeting", "travel", "onboarding", "handover", "checkpoint", "agenda", "minutes",
    "deadline", "followup", "pipeline", "quota", "territory", "commission",
]

# opportunity columns whose change makes a record part of the daily delta
MUTABLE_CRITICAL = ["opportunityname", "salesplay", "salesstagename", "primaryproduct", "segment", "areaname"]
NON_CRITICAL = ["notes"]

START = datetime(2024, 1, 1, tzinfo=timezone.utc)


@dataclass
class SynthConfig:
    seed: int = 42
    n_contents: int = 2_000
    n_opportunities: int = 300
    target_pass_rate: float = 0.175
    delta_fraction: float = 0.014
    new_fraction: float = 0.0
    closed_fraction: float = 0.1
    unpublished_fraction: float = 0.05
    solution_areas: list[str] = field(default_factory=lambda: list(PORTFOLIO))
    sales_stages: list[str] = field(default_factory=lambda: list(SALES_STAGES))
    areas: list[str] = field(default_factory=lambda: list(AREAS))
    segments: list[str] = field(default_factory=lambda: list(SEGMENTS))

    def validate(self) -> None:
        if not 0 < self.target_pass_rate <= 1:
            raise InvalidConfig("target_pass_rate must be in (0, 1]")
        for name in ("solution_areas", "sales_stages", "areas", "segments"):
            if not getattr(self, name):
                raise InvalidConfig(f"{name} vocabulary is empty")
        unknown = set(self.solution_areas) - set(PORTFOLIO)
        if unknown:
            raise InvalidConfig(f"no portfolio for solution areas {sorted(unknown)}")
        if self.n_contents < 0 or self.n_opportunities < 0:
            raise InvalidConfig("counts must be non-negative")
        for name in ("delta_fraction", "new_fraction", "closed_fraction", "unpublished_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise InvalidConfig(f"{name} must be in [0, 1]")
        if self.target_pass_rate < self.min_pass_rate():
            raise InvalidConfig(f"target pass-rate below the no-wildcard floor {self.min_pass_rate():.4f}")

    @property
    def filter_vocab_sizes(self) -> tuple[int, int, int]:
        return (len(self.sales_stages), len(self.areas), len(self.solution_areas))

    def min_pass_rate(self) -> float:
        return math.prod(1 / k for k in self.filter_vocab_sizes)


def pass_rate(wildcard: float, sizes: Sequence[int]) -> float:
    """Pass probability when every document field is absent with prob ``wildcard``
    and otherwise uniform over ``k`` values."""
    return math.prod(wildcard + (1 - wildcard) / k for k in sizes)


def solve_wildcard(target: float, sizes: Sequence[int]) -> float:
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = (lo + hi) / 2
        if pass_rate(mid, sizes) < target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def _stratified(rng: random.Random, n: int, vocab: Sequence[str], wildcard: float) -> list[str | None]:
    n_wild = round(wildcard * n)
    rest = n - n_wild
    values: list[str | None] = [None] * n_wild + [vocab[i % len(vocab)] for i in range(rest)]
    rng.shuffle(values)
    return values


@dataclass
class SynthCorpus:
    contents: list[dict[str, Any]]
    opportunities: list[dict[str, Any]]
    expected: dict[str, Any]

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "contents": out / "contents.jsonl",
            "opportunities": out / "opportunities.jsonl",
            "expected": out / "expected_stats.json",
        }
        write_jsonl(paths["contents"], self.contents)
        write_jsonl(paths["opportunities"], self.opportunities)
        paths["expected"].write_text(json.dumps(self.expected, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return paths


def _opportunity(rng: random.Random, idx: int, cfg: SynthConfig, when: datetime) -> dict[str, Any]:
    sa = rng.choice(cfg.solution_areas)
    products, plays = PORTFOLIO[sa]
    product = rng.choice(products)
    return {
        "opportunityid": f"O{idx:07d}",
        "opportunityname": f"{rng.choice(CUSTOMERS)} {product} {rng.choice(SUFFIXES)}",
        "salesplay": rng.choice(plays),
        "salesstagename": rng.choice(cfg.sales_stages),
        "primaryproduct": product,
        "segment": rng.choice(cfg.segments),
        "areaname": rng.choice(cfg.areas),
        "solutionarea": sa,
        "snapshottime": format_timestamp(when),
        "status": "closed" if rng.random() < cfg.closed_fraction else "open",
        "notes": f"owner follow-up {rng.randrange(1000)}",
    }


def generate(cfg: SynthConfig) -> SynthCorpus:
    """Deterministic corpus for ``cfg.seed``; expected stats carry the analytic pass-rate."""
    cfg.validate()
    rng = random.Random(cfg.seed)
    sizes = cfg.filter_vocab_sizes
    wildcard = solve_wildcard(cfg.target_pass_rate, sizes)
    n = cfg.n_contents
    stages = _stratified(rng, n, cfg.sales_stages, wildcard)
    areas = _stratified(rng, n, cfg.areas, wildcard)
    sols = _stratified(rng, n, cfg.solution_areas, wildcard)

    contents = []
    for i in range(n):
        portfolio_area = sols[i] or rng.choice(cfg.solution_areas)
        products, plays = PORTFOLIO[portfolio_area]
        product = rng.choice(products)
        play = rng.choice(plays)
        kind = rng.choice(list(DOC_KINDS))
        industry = rng.choice(INDUSTRIES)
        audience = rng.choice(AUDIENCES)
        contents.append(
            {
                "contentid": f"C{i:06d}",
                "name": f"{product} {kind} for {industry}",
                "description": f"{kind.capitalize()} for {audience} who {play}",
                "solutionarea": sols[i],
                "product": product,
                "salesstage": stages[i],
                "area": areas[i],
                "customerready": DOC_KINDS[kind],
                "published": rng.random() >= cfg.unpublished_fraction,
                "lastmodified": format_timestamp(START - timedelta(days=rng.randrange(365))),
            }
        )

    opportunities = [_opportunity(rng, i, cfg, START) for i in range(cfg.n_opportunities)]

    published = [c for c in contents if c["published"]]
    open_opps = [o for o in opportunities if o["status"] == "open"]
    expected = {
        "seed": cfg.seed,
        "n_contents": n,
        "n_published": len(published),
        "n_opportunities": cfg.n_opportunities,
        "n_open": len(open_opps),
        "wildcard_fraction": wildcard,
        "analytic_pass_rate": pass_rate(wildcard, sizes),
        "target_pass_rate": cfg.target_pass_rate,
        "config": asdict(cfg),
    }
    return SynthCorpus(contents, opportunities, expected)


def realized_pass_rate(contents: Sequence[dict[str, Any]], opportunities: Sequence[dict[str, Any]]) -> float:
    """Mean fraction of documents passing the filters, over open opportunities."""
    keys = [
        (normalize_field(c.get("salesstage")), normalize_field(c.get("area")), normalize_field(c.get("solutionarea")))
        for c in contents
    ]
    rates = []
    for o in opportunities:
        if o.get("status", "open") != "open":
            continue
        want = (
            normalize_field(o.get("salesstagename")),
            normalize_field(o.get("areaname")),
            normalize_field(o.get("solutionarea")),
        )
        hits = sum(1 for have in keys if all(not w or not h or w == h for w, h in zip(want, have)))
        rates.append(hits / len(keys))
    return sum(rates) / len(rates) if rates else 0.0


def _mutate_field(rng: random.Random, row: dict[str, Any], name: str, cfg: SynthConfig, day: int) -> None:
    sa = row.get("solutionarea") or cfg.solution_areas[0]
    products, plays = PORTFOLIO[sa]
    if name == "opportunityname":
        row[name] = f"{row[name]} phase {day + 2}"
        return
    if name == "notes":
        row[name] = f"{row.get(name, '')} day {day} call".strip()
        return
    pool = {
        "salesplay": plays,
        "salesstagename": cfg.sales_stages,
        "primaryproduct": products,
        "segment": cfg.segments,
        "areaname": cfg.areas,
    }[name]
    current = normalize_field(row.get(name))
    choices = [v for v in pool if normalize_field(v) != current]
    if not choices:
        # single-value vocabulary: force a distinct value
        row[name] = f"{row.get(name) or ''} {day}".strip()
    else:
        row[name] = rng.choice(choices)


@dataclass
class DayMutation:
    opportunities: list[dict[str, Any]]
    truth: list[str]
    noise: list[str]
    changes: dict[str, str]


def mutate_day(
    opportunities: Sequence[dict[str, Any]],
    cfg: SynthConfig,
    day: int,
    fields: Sequence[str] | None = None,
) -> DayMutation:
    """Apply one simulated day of CRM edits.

    ``round(delta_fraction * n)`` open opportunities get one critical field
    changed (drawn from ``fields`` when given); as many others get only a
    non-critical edit.  ``truth`` lists exactly the ids a correct delta
    detector must flag: critically edited plus net-new opportunities.
    """
    rng = random.Random(cfg.seed * 1_000_003 + day)
    rows = [dict(r) for r in opportunities]
    allowed = list(fields) if fields is not None else MUTABLE_CRITICAL
    critical = [f for f in allowed if f in MUTABLE_CRITICAL]
    noncritical = [f for f in allowed if f in NON_CRITICAL]
    open_idx = [i for i, r in enumerate(rows) if r.get("status", "open") == "open"]
    n_mut = min(len(open_idx), round(cfg.delta_fraction * len(rows)))
    picked = rng.sample(open_idx, n_mut)
    truth: list[str] = []
    changes: dict[str, str] = {}
    for i in picked:
        if critical:
            name = rng.choice(critical)
            truth.append(rows[i]["opportunityid"])
        else:
            name = rng.choice(noncritical or NON_CRITICAL)
        _mutate_field(rng, rows[i], name, cfg, day)
        changes[rows[i]["opportunityid"]] = name
    taken = set(picked)
    rest = [i for i in open_idx if i not in taken]
    noise_idx = rng.sample(rest, min(len(rest), n_mut)) if fields is None else []
    noise = []
    for i in noise_idx:
        _mutate_field(rng, rows[i], "notes", cfg, day)
        noise.append(rows[i]["opportunityid"])
    when = START + timedelta(days=day + 1)
    n_new = round(cfg.new_fraction * len(rows))
    next_idx = 1 + max((int(r["opportunityid"][1:]) for r in rows), default=-1)
    for j in range(n_new):
        row = _opportunity(rng, next_idx + j, cfg, when)
        row["status"] = "open"
        rows.append(row)
        truth.append(row["opportunityid"])
    for r in rows:
        r["snapshottime"] = format_timestamp(when)
    noncrit_only = [oid for oid, name in changes.items() if name in NON_CRITICAL]
    return DayMutation(rows, sorted(truth), sorted(noise + noncrit_only), changes)


def graded_queries(
    contents: Sequence[dict[str, Any]], n: int = 22, seed: int = 0
) -> list[dict[str, Any]]:
    """Opportunity rows whose relevance to the catalog rises evenly from none to near-copy.

    Query ``i`` takes a random published document and keeps ``m`` of its ``L``
    prompt tokens, padding back to length ``L`` with words absent from the
    catalog, so its overlap with the anchor is about ``m / (2L - m)``.  ``m`` is
    chosen to put that overlap on an even grid ``t = i/(n-1)``.  No filter
    fields are set, so every document competes.
    """
    from .catalog import content_from_json
    from .prompts import build_content_prompt, tokenize

    rng = random.Random(seed)
    pool = [c for c in contents if c.get("published", True)]
    rows = []
    for i in range(n):
        doc = content_from_json(rng.choice(pool))
        words = list(dict.fromkeys(tokenize(build_content_prompt(doc).text)))
        rng.shuffle(words)
        t = i / max(1, n - 1)
        keep = round(2 * len(words) * t / (1 + t))
        pad = rng.sample(FILLER, min(len(FILLER), len(words) - keep))
        rows.append(
            {
                "opportunityid": f"Q{i:03d}",
                "opportunityname": " ".join(words[:keep] + pad),
                "snapshottime": format_timestamp(START),
            }
        )
    return rows


ABLATION_SPLIT = {"A": 6, "B": 6, "C": 5, "D": 5}


def ablation_assignment(
    opportunities: Sequence[dict[str, Any]], seed: int = 0, split: dict[str, int] | None = None
) -> list[tuple[str, str, str]]:
    """(query id, opportunity id, group) triples over distinct open opportunities."""
    split = split or ABLATION_SPLIT
    rng = random.Random(seed)
    open_ids = sorted(
        o["opportunityid"] for o in opportunities
        if o.get("status", "open") == "open" and o.get("salesplay")
    )
    total = sum(split.values())
    if len(open_ids) < total:
        raise InvalidConfig(f"need {total} open opportunities with a sales play, have {len(open_ids)}")
    chosen = rng.sample(open_ids, total)
    out = []
    k = 0
    for group in sorted(split):
        for _ in range(split[group]):
            out.append((f"q{k:02d}", chosen[k], group))
            k += 1
    return out


def synth_ratings(
    queries: Sequence[Any], n_raters: int = 3, noise: float = 0.75, seed: int = 0
) -> list[Any]:
    """Integer 0..5 ratings scattered around 5 x cross score, one set per rater and query."""
    from .eval.reports import RatingSet

    rng = random.Random(seed)
    out = []
    for r in range(n_raters):
        for q in queries:
            scores = tuple(
                float(min(5, max(0, round(5 * it.cross_score + rng.gauss(0.0, noise)))))
                for it in q.recommendation.items
            )
            out.append(RatingSet(q.query_id, f"expert-{r + 1}", scores))
    return out
