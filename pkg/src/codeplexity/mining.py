"""Valid-subtree enumeration, matching, and catalog mining.

A pattern is a rooted fragment of a canonical tree obtained by picking a
node as root and, recursively, any subset of each kept node's children that
keeps every syntactically mandatory child and preserves sibling order. Such
fragments always read as well-formed code, which is what makes them
interpretable subroutines.

Matching (``iso``) embeds a pattern into a tree under the same rules:
kind/label equality at each node, order-preserving injective child
embedding that may skip optional children but never mandatory ones. For
patterns produced by enumeration the two views coincide exactly:

    S in enumerate_subtrees(T, S.node_count)  <=>  iso(T, S)

Catalogs deduplicate patterns corpus-wide, drop rare ones, and merge
always-co-occurring contained pairs: whenever two patterns occur in exactly
the same programs and one is contained in the other, only the larger
carries information, so the smaller is dropped.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .astcore import AstNode, CanonicalAst, mandatory_mask, walk
from .errors import BudgetExceeded, EmptyCatalog

DEFAULT_MAX_NODES = 15
DEFAULT_MIN_SUPPORT = 5
DEFAULT_PATTERN_CAP = 20000


@dataclass(frozen=True)
class PatternNode:
    kind: str
    label: str | None
    children: tuple["PatternNode", ...]


def pattern_from_ast(n: AstNode) -> PatternNode:
    return PatternNode(n.kind, n.label, tuple(pattern_from_ast(c) for c in n.children))


def pattern_as_tree(p: PatternNode) -> AstNode:
    """View a pattern as a matchable tree, masks rebuilt from the kind table.

    Valid patterns keep mandatory children in their original positions, so
    the positional reconstruction is faithful.
    """
    children = tuple(pattern_as_tree(c) for c in p.children)
    return AstNode(p.kind, p.label, children, mandatory_mask(p.kind, len(children)))


def _canonical(p: PatternNode) -> str:
    return json.dumps(_nested(p), separators=(",", ":"))


def _nested(p: PatternNode):
    return [p.kind, p.label, [_nested(c) for c in p.children]]


def _pattern_size(p: PatternNode) -> int:
    return 1 + sum(_pattern_size(c) for c in p.children)


@dataclass(frozen=True)
class SubtreePattern:
    root: PatternNode
    canonical: str
    fingerprint: str
    node_count: int

    @classmethod
    def from_root(cls, root: PatternNode) -> "SubtreePattern":
        canonical = _canonical(root)
        digest = hashlib.sha256(canonical.encode()).hexdigest()
        return cls(root, canonical, digest, _pattern_size(root))

    def sort_key(self) -> tuple[int, str]:
        return (self.node_count, self.canonical)


@dataclass(frozen=True)
class MiningParams:
    max_nodes: int = DEFAULT_MAX_NODES
    min_support: int = DEFAULT_MIN_SUPPORT
    pattern_cap: int = DEFAULT_PATTERN_CAP

    def to_dict(self) -> dict:
        return {
            "max_nodes": self.max_nodes,
            "min_support": self.min_support,
            "pattern_cap": self.pattern_cap,
        }


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------

def enumerate_subtrees(
    tree: CanonicalAst | AstNode,
    max_nodes: int,
    pattern_cap: int | None = None,
) -> set[SubtreePattern]:
    """All valid patterns of the tree with at most ``max_nodes`` nodes.

    When ``pattern_cap`` is set and some node roots more patterns than the
    cap, the node's pattern list is truncated deterministically (smallest
    patterns kept) and BudgetExceeded is raised carrying the truncated
    result set.
    """
    if max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")
    root = tree.root if isinstance(tree, CanonicalAst) else tree
    memo: dict[int, list[tuple[int, PatternNode]]] = {}
    truncated = False

    def rooted_at(n: AstNode) -> list[tuple[int, PatternNode]]:
        nonlocal truncated
        cached = memo.get(id(n))
        if cached is not None:
            return cached
        options: list[list[tuple[int, PatternNode] | None]] = []
        for child, required in zip(n.children, n.mandatory):
            child_pats = rooted_at(child)
            opts: list[tuple[int, PatternNode] | None] = [] if required else [None]
            opts.extend(child_pats)
            options.append(opts)

        found: set[PatternNode] = set()

        def combine(idx: int, size: int, picked: list[PatternNode]):
            if idx == len(options):
                found.add(PatternNode(n.kind, n.label, tuple(picked)))
                return
            for opt in options[idx]:
                if opt is None:
                    combine(idx + 1, size, picked)
                    continue
                csize, cpat = opt
                if size + csize > max_nodes:
                    continue
                picked.append(cpat)
                combine(idx + 1, size + csize, picked)
                picked.pop()

        # A mandatory child that roots no pattern within budget leaves this
        # node with no valid pattern either; the combiner prunes oversized
        # selections on its own.
        result: list[tuple[int, PatternNode]] = []
        if all(options):
            combine(0, 1, [])
            result = sorted(
                ((_pattern_size(p), p) for p in found),
                key=lambda t: (t[0], _canonical(t[1])),
            )
            if pattern_cap is not None and len(result) > pattern_cap:
                result = result[:pattern_cap]
                truncated = True
        memo[id(n)] = result
        return result

    all_patterns: set[PatternNode] = set()
    for n in walk(root):
        all_patterns.update(p for _, p in rooted_at(n))
    out = {SubtreePattern.from_root(p) for p in all_patterns}
    if truncated:
        raise BudgetExceeded(
            f"pattern cap {pattern_cap} hit while enumerating", out
        )
    return out


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------

def _match(p: PatternNode, t: AstNode, memo: dict) -> bool:
    key = (id(p), id(t))
    hit = memo.get(key)
    if hit is not None:
        return hit
    ok = p.kind == t.kind and p.label == t.label
    if ok and p.children:
        ok = _embed(p.children, t.children, t.mandatory, 0, 0, memo)
    memo[key] = ok
    return ok


def _embed(
    ps: Sequence[PatternNode],
    ts: Sequence[AstNode],
    mask: Sequence[bool],
    i: int,
    j: int,
    memo: dict,
) -> bool:
    if i == len(ps):
        # Leftover mandatory children of the matched node would make the
        # pattern correspond to syntactically incomplete code.
        return not any(mask[j:])
    if j == len(ts):
        return False
    if _match(ps[i], ts[j], memo) and _embed(ps, ts, mask, i + 1, j + 1, memo):
        return True
    if not mask[j] and _embed(ps, ts, mask, i, j + 1, memo):
        return True
    return False


def iso(tree: CanonicalAst | AstNode, pattern: SubtreePattern) -> bool:
    """True when the pattern occurs in the tree."""
    root = tree.root if isinstance(tree, CanonicalAst) else tree
    memo: dict = {}
    return any(_match(pattern.root, t, memo) for t in walk(root))


def match_sites(tree: CanonicalAst | AstNode, pattern: SubtreePattern) -> int:
    """Number of distinct nodes where the pattern's root matches."""
    root = tree.root if isinstance(tree, CanonicalAst) else tree
    memo: dict = {}
    return sum(1 for t in walk(root) if _match(pattern.root, t, memo))


def pattern_contains(outer: SubtreePattern, inner: SubtreePattern) -> bool:
    """True when ``inner`` occurs inside ``outer`` viewed as a tree."""
    return iso(pattern_as_tree(outer.root), inner)


def temporal_support(
    tree: CanonicalAst | AstNode, frame_store_patterns: Iterable[SubtreePattern]
) -> int:
    """Distinct match sites of the designated frame-storing patterns.

    A node where several designated patterns match is one site.
    """
    root = tree.root if isinstance(tree, CanonicalAst) else tree
    memo: dict = {}
    patterns = list(frame_store_patterns)
    return sum(
        1 for t in walk(root) if any(_match(p.root, t, memo) for p in patterns)
    )


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubtreeCatalog:
    canon_digest: str
    params: MiningParams
    patterns: tuple[SubtreePattern, ...]
    occurrences: tuple[frozenset[str], ...]
    truncated_questions: tuple[str, ...] = ()

    def __post_init__(self):
        assert len(self.patterns) == len(self.occurrences)

    def support(self, k: int) -> int:
        return len(self.occurrences[k])

    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "canon": self.canon_digest,
                "params": self.params.to_dict(),
                "patterns": [p.canonical for p in self.patterns],
            },
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    def index_of(self, fingerprint: str) -> int:
        for k, p in enumerate(self.patterns):
            if p.fingerprint == fingerprint:
                return k
        raise KeyError(fingerprint)


def mine_catalog(
    corpus: Iterable[CanonicalAst],
    params: MiningParams = MiningParams(),
    canon_digest: str = "",
) -> SubtreeCatalog:
    """Mine, support-filter, and merge the corpus-wide pattern catalog."""
    programs = list(corpus)
    if not programs:
        raise ValueError("corpus must be non-empty")

    occ: dict[str, set[str]] = {}
    by_key: dict[str, SubtreePattern] = {}
    truncated: list[str] = []
    for program in programs:
        try:
            patterns = enumerate_subtrees(program, params.max_nodes, params.pattern_cap)
        except BudgetExceeded as exc:
            patterns = exc.patterns
            truncated.append(program.question_id)
        for pat in patterns:
            key = pat.canonical
            if key not in by_key:
                by_key[key] = pat
                occ[key] = set()
            occ[key].add(program.question_id)

    supported = [
        pat for key, pat in by_key.items() if len(occ[key]) >= params.min_support
    ]
    if not supported:
        raise EmptyCatalog(
            f"no pattern reached min_support={params.min_support} "
            f"on {len(programs)} programs"
        )

    # Merge: within each class of identical occurrence sets keep only
    # containment-maximal patterns. Bigger patterns are processed first;
    # equal-sized distinct patterns can never contain each other.
    groups: dict[frozenset[str], list[SubtreePattern]] = {}
    for pat in supported:
        groups.setdefault(frozenset(occ[pat.canonical]), []).append(pat)

    kept: list[tuple[SubtreePattern, frozenset[str]]] = []
    for qids in sorted(groups, key=lambda s: (len(s), sorted(s))):
        members = sorted(
            groups[qids], key=lambda p: (-p.node_count, p.canonical)
        )
        maximal: list[SubtreePattern] = []
        for pat in members:
            if not any(pattern_contains(big, pat) for big in maximal):
                maximal.append(pat)
        kept.extend((pat, qids) for pat in maximal)

    kept.sort(key=lambda item: item[0].sort_key())
    return SubtreeCatalog(
        canon_digest=canon_digest,
        params=params,
        patterns=tuple(pat for pat, _ in kept),
        occurrences=tuple(qids for _, qids in kept),
        truncated_questions=tuple(sorted(truncated)),
    )


# ---------------------------------------------------------------------------
# Pretty printing and serialization
# ---------------------------------------------------------------------------

def pretty(pattern: SubtreePattern, elide_placeholders: bool = True) -> str:
    """Compact one-line rendering; variable placeholders elided by default."""

    def render(p: PatternNode) -> str | None:
        if elide_placeholders and p.kind == "NamePlaceholder":
            return None
        head = p.label if p.kind == "ApiName" else p.kind
        if p.kind not in ("ApiName",) and p.label is not None:
            head = f"{p.kind}[{p.label}]"
        parts = [r for r in (render(c) for c in p.children) if r]
        return f"{head}({', '.join(parts)})" if parts else head

    return render(pattern.root) or pattern.root.kind


def _pattern_node_to_dict(p: PatternNode) -> dict:
    d: dict = {"kind": p.kind}
    if p.label is not None:
        d["label"] = p.label
    d["children"] = [_pattern_node_to_dict(c) for c in p.children]
    return d


def _pattern_node_from_dict(d: dict) -> PatternNode:
    return PatternNode(
        d["kind"],
        d.get("label"),
        tuple(_pattern_node_from_dict(c) for c in d.get("children", ())),
    )


def catalog_to_dict(catalog: SubtreeCatalog) -> dict:
    return {
        "format": "codeplexity-catalog/1",
        "canonicalization_digest": catalog.canon_digest,
        "params": catalog.params.to_dict(),
        "fingerprint": catalog.fingerprint(),
        "truncated_questions": list(catalog.truncated_questions),
        "patterns": [
            {
                "index": k,
                "fingerprint": p.fingerprint,
                "node_count": p.node_count,
                "support": catalog.support(k),
                "pretty": pretty(p),
                "root": _pattern_node_to_dict(p.root),
                "occurrences": sorted(catalog.occurrences[k]),
            }
            for k, p in enumerate(catalog.patterns)
        ],
    }


def catalog_from_dict(d: dict) -> SubtreeCatalog:
    params = MiningParams(**d["params"])
    patterns = []
    occurrences = []
    for entry in d["patterns"]:
        patterns.append(SubtreePattern.from_root(_pattern_node_from_dict(entry["root"])))
        occurrences.append(frozenset(entry["occurrences"]))
    return SubtreeCatalog(
        canon_digest=d["canonicalization_digest"],
        params=params,
        patterns=tuple(patterns),
        occurrences=tuple(occurrences),
        truncated_questions=tuple(d.get("truncated_questions", ())),
    )
