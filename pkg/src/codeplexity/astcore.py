"""Canonical ASTs for generated visual programs.

Programs arrive as short Python functions produced by a code-generation
model. For analysis we only care about their structure and the perception
API they touch, so parsing canonicalizes aggressively:

* every user identifier collapses to a ``NamePlaceholder`` node,
* every literal becomes a value-less literal node,
* call/attribute names on the configured API whitelist survive as
  ``ApiName`` nodes, everything else is a placeholder,
* operator tokens (``==``, ``and``, ``+`` ...) are kept as node labels.

Two programs that differ only in variable names or literal values therefore
parse to structurally identical trees.

The supported syntax is a closed taxonomy (see ``KINDS``). Outside it,
strict mode (the default) raises ``UnsupportedConstruct``; permissive mode
emits an ``OpaqueStmt`` leaf so the rest of the program still parses.
"""

from __future__ import annotations

import ast as pyast
import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import MissingFunction, ParseError, UnsupportedConstruct, UnterminatedString

KINDS = frozenset({
    "FunctionDef", "Assign", "AugAssign", "For", "While", "If",
    "ElifBranch", "ElseBranch", "Break", "Continue", "Return", "ExprStmt",
    "Call", "Attribute", "Subscript", "BinOp", "UnaryOp", "BoolOp",
    "Compare", "ListLit", "TupleLit", "Comprehension", "NumLit", "StrLit",
    "BoolLit", "NoneLit", "NamePlaceholder", "ApiName", "OpaqueStmt",
})

# Kinds whose children are all syntactically required.
_ALL_MANDATORY = frozenset({
    "Assign", "AugAssign", "BinOp", "UnaryOp", "BoolOp", "Compare",
    "ExprStmt", "Attribute", "Subscript",
})

# Kinds where only the first k children are required (e.g. an ``if`` needs
# its test but any subset of body statements still reads as valid code).
_PREFIX_MANDATORY = {
    "If": 1,
    "ElifBranch": 1,
    "While": 1,
    "For": 2,
    "Call": 1,
    "Comprehension": 3,
}

# Default call-name whitelist: the perception API of the program generator
# plus the Python builtins those programs lean on. Config-replaceable.
DEFAULT_API_WHITELIST = (
    "simple_qa", "exists", "find", "query", "best_text_match",
    "select_answer", "frame_from_index", "trim", "append",
    "range", "len", "enumerate", "sorted", "min", "max", "abs",
    "round", "int", "float", "str", "bool", "list",
)


def mandatory_mask(kind: str, n_children: int) -> tuple[bool, ...]:
    """Per-child required/optional flags for a node of the given kind."""
    if kind in _ALL_MANDATORY:
        return (True,) * n_children
    k = _PREFIX_MANDATORY.get(kind, 0)
    return tuple(i < k for i in range(n_children))


@dataclass(frozen=True)
class AstNode:
    kind: str
    label: str | None
    children: tuple["AstNode", ...]
    mandatory: tuple[bool, ...]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")
        if len(self.mandatory) != len(self.children):
            raise ValueError("mandatory mask length must equal children length")


def node(kind: str, label: str | None = None, children: Iterable[AstNode] = ()) -> AstNode:
    """Build a node with its mask derived from the per-kind table."""
    cs = tuple(children)
    return AstNode(kind, label, cs, mandatory_mask(kind, len(cs)))


def walk(root: AstNode) -> Iterator[AstNode]:
    """Preorder traversal."""
    stack = [root]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(n.children))


def count_nodes(root: AstNode) -> int:
    return sum(1 for _ in walk(root))


@dataclass(frozen=True)
class CanonicalAst:
    question_id: str
    root: AstNode
    node_count: int

    @classmethod
    def from_root(cls, question_id: str, root: AstNode) -> "CanonicalAst":
        if root.kind != "FunctionDef":
            raise ValueError("canonical tree root must be a FunctionDef")
        return cls(question_id, root, count_nodes(root))


@dataclass(frozen=True)
class CanonConfig:
    """Canonicalization settings; its digest binds downstream artifacts."""

    api_whitelist: tuple[str, ...] = DEFAULT_API_WHITELIST
    strict: bool = True

    def digest(self) -> str:
        payload = json.dumps(
            [sorted(set(self.api_whitelist)), self.strict], separators=(",", ":")
        )
        return hashlib.sha256(payload.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Source cleanup
# ---------------------------------------------------------------------------

def strip_noise(source: str) -> str:
    """Drop comments and blank lines, leaving code lines untouched.

    ``#`` inside string literals is not a comment; triple-quoted strings may
    span lines. Raises UnterminatedString (with the opening line number)
    when a literal never closes.
    """
    out: list[str] = []
    i, n = 0, len(source)
    line = 1
    while i < n:
        c = source[i]
        if c == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        if c in "'\"":
            start_line = line
            triple = source.startswith(c * 3, i)
            delim = c * 3 if triple else c
            out.append(delim)
            i += len(delim)
            closed = False
            while i < n:
                if source.startswith(delim, i):
                    out.append(delim)
                    i += len(delim)
                    closed = True
                    break
                ch = source[i]
                if ch == "\\" and i + 1 < n:
                    out.append(source[i : i + 2])
                    if source[i + 1] == "\n":
                        line += 1
                    i += 2
                    continue
                if ch == "\n":
                    if not triple:
                        raise UnterminatedString(start_line)
                    line += 1
                out.append(ch)
                i += 1
            if not closed:
                raise UnterminatedString(start_line)
            continue
        if c == "\n":
            line += 1
        out.append(c)
        i += 1

    lines = [ln.rstrip() for ln in "".join(out).split("\n")]
    kept = [ln for ln in lines if ln]
    return "\n".join(kept) + "\n" if kept else ""


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_BINOPS = {
    pyast.Add: "+", pyast.Sub: "-", pyast.Mult: "*", pyast.Div: "/",
    pyast.FloorDiv: "//", pyast.Mod: "%", pyast.Pow: "**",
    pyast.LShift: "<<", pyast.RShift: ">>", pyast.BitOr: "|",
    pyast.BitXor: "^", pyast.BitAnd: "&", pyast.MatMult: "@",
}
_CMPOPS = {
    pyast.Eq: "==", pyast.NotEq: "!=", pyast.Lt: "<", pyast.LtE: "<=",
    pyast.Gt: ">", pyast.GtE: ">=", pyast.In: "in", pyast.NotIn: "not in",
    pyast.Is: "is", pyast.IsNot: "is not",
}
_UNARYOPS = {pyast.Not: "not", pyast.USub: "-", pyast.UAdd: "+", pyast.Invert: "~"}
_BOOLOPS = {pyast.And: "and", pyast.Or: "or"}


class _Canonicalizer:
    def __init__(self, whitelist: frozenset[str], strict: bool):
        self.whitelist = whitelist
        self.strict = strict

    def unsupported(self, pynode, what: str | None = None) -> AstNode:
        construct = what or type(pynode).__name__
        if self.strict:
            raise UnsupportedConstruct(getattr(pynode, "lineno", 0), construct)
        return node("OpaqueStmt")

    def name(self, ident: str) -> AstNode:
        if ident in self.whitelist:
            return node("ApiName", ident)
        return node("NamePlaceholder")

    def body(self, stmts) -> list[AstNode]:
        return [self.stmt(s) for s in stmts]

    # -- statements ---------------------------------------------------------

    def stmt(self, s) -> AstNode:
        if isinstance(s, pyast.Assign):
            kids = [self.expr(t) for t in s.targets] + [self.expr(s.value)]
            return node("Assign", None, kids)
        if isinstance(s, pyast.AugAssign):
            op = _BINOPS.get(type(s.op))
            if op is None:
                return self.unsupported(s)
            return node("AugAssign", op + "=", [self.expr(s.target), self.expr(s.value)])
        if isinstance(s, pyast.For):
            kids = [self.expr(s.target), self.expr(s.iter)] + self.body(s.body)
            if s.orelse:
                kids.append(node("ElseBranch", None, self.body(s.orelse)))
            return node("For", None, kids)
        if isinstance(s, pyast.While):
            kids = [self.expr(s.test)] + self.body(s.body)
            if s.orelse:
                kids.append(node("ElseBranch", None, self.body(s.orelse)))
            return node("While", None, kids)
        if isinstance(s, pyast.If):
            return self.if_stmt(s, "If")
        if isinstance(s, pyast.Break):
            return node("Break")
        if isinstance(s, pyast.Continue):
            return node("Continue")
        if isinstance(s, pyast.Return):
            kids = [self.expr(s.value)] if s.value is not None else []
            return node("Return", None, kids)
        if isinstance(s, pyast.Expr):
            return node("ExprStmt", None, [self.expr(s.value)])
        return self.unsupported(s)

    def if_stmt(self, s, kind: str) -> AstNode:
        kids = [self.expr(s.test)] + self.body(s.body)
        tail = self.orelse_of(s)
        if tail is not None:
            kids.append(tail)
        return node(kind, None, kids)

    def orelse_of(self, s) -> AstNode | None:
        if not s.orelse:
            return None
        # ``elif`` parses as a nested If starting at the same column as the
        # outer ``if``; a real ``else:`` block is always indented deeper.
        first = s.orelse[0]
        if (
            len(s.orelse) == 1
            and isinstance(first, pyast.If)
            and first.col_offset == s.col_offset
        ):
            return self.if_stmt(first, "ElifBranch")
        return node("ElseBranch", None, self.body(s.orelse))

    # -- expressions --------------------------------------------------------

    def expr(self, e) -> AstNode:
        if isinstance(e, pyast.Name):
            return self.name(e.id)
        if isinstance(e, pyast.Constant):
            return self.constant(e)
        if isinstance(e, pyast.JoinedStr):
            return node("StrLit")
        if isinstance(e, pyast.Call):
            if any(isinstance(a, pyast.Starred) for a in e.args):
                return self.unsupported(e, "Starred")
            kids = [self.expr(e.func)]
            kids += [self.expr(a) for a in e.args]
            kids += [self.expr(kw.value) for kw in e.keywords]
            return node("Call", None, kids)
        if isinstance(e, pyast.Attribute):
            return node("Attribute", None, [self.expr(e.value), self.name(e.attr)])
        if isinstance(e, pyast.Subscript):
            if isinstance(e.slice, pyast.Slice):
                return self.unsupported(e.slice, "Slice")
            return node("Subscript", None, [self.expr(e.value), self.expr(e.slice)])
        if isinstance(e, pyast.BinOp):
            op = _BINOPS.get(type(e.op))
            if op is None:
                return self.unsupported(e)
            return node("BinOp", op, [self.expr(e.left), self.expr(e.right)])
        if isinstance(e, pyast.UnaryOp):
            op = _UNARYOPS.get(type(e.op))
            if op is None:
                return self.unsupported(e)
            return node("UnaryOp", op, [self.expr(e.operand)])
        if isinstance(e, pyast.BoolOp):
            label = _BOOLOPS[type(e.op)]
            return node("BoolOp", label, [self.expr(v) for v in e.values])
        if isinstance(e, pyast.Compare):
            ops = [_CMPOPS.get(type(o)) for o in e.ops]
            if any(o is None for o in ops):
                return self.unsupported(e)
            kids = [self.expr(e.left)] + [self.expr(c) for c in e.comparators]
            return node("Compare", " ".join(ops), kids)
        if isinstance(e, pyast.List):
            return node("ListLit", None, [self.expr(v) for v in e.elts])
        if isinstance(e, pyast.Tuple):
            return node("TupleLit", None, [self.expr(v) for v in e.elts])
        if isinstance(e, (pyast.ListComp, pyast.SetComp, pyast.GeneratorExp)):
            return self.comprehension(e)
        if isinstance(e, pyast.IfExp):
            # Conditional expressions reuse the If kind: test, then-value,
            # and the alternative wrapped as an else branch.
            return node("If", None, [
                self.expr(e.test),
                self.expr(e.body),
                node("ElseBranch", None, [self.expr(e.orelse)]),
            ])
        return self.unsupported(e)

    def constant(self, e) -> AstNode:
        v = e.value
        if isinstance(v, bool):
            return node("BoolLit")
        if v is None:
            return node("NoneLit")
        if isinstance(v, (int, float, complex)):
            return node("NumLit")
        if isinstance(v, (str, bytes)):
            return node("StrLit")
        return self.unsupported(e, f"Constant({type(v).__name__})")

    def comprehension(self, e) -> AstNode:
        if len(e.generators) != 1 or e.generators[0].is_async:
            return self.unsupported(e, "MultiGeneratorComprehension")
        gen = e.generators[0]
        kids = [self.expr(e.elt), self.expr(gen.target), self.expr(gen.iter)]
        kids += [self.expr(cond) for cond in gen.ifs]
        return node("Comprehension", None, kids)


def parse(
    source: str,
    api_whitelist: Iterable[str] = DEFAULT_API_WHITELIST,
    question_id: str = "",
    strict: bool = True,
) -> CanonicalAst:
    """Parse one cleaned program into its canonical tree.

    The program must hold exactly one top-level function definition (the
    generated-code convention). Extra top-level statements are an error in
    strict mode and ignored otherwise.
    """
    try:
        module = pyast.parse(source)
    except SyntaxError as exc:
        raise ParseError(exc.lineno or 0, exc.msg or "valid syntax") from None

    defs = [s for s in module.body if isinstance(s, pyast.FunctionDef)]
    if not defs:
        raise MissingFunction("no top-level function definition found")
    if strict:
        for s in module.body:
            if s is not defs[0]:
                what = (
                    "second top-level function"
                    if isinstance(s, pyast.FunctionDef)
                    else type(s).__name__ + " at top level"
                )
                raise UnsupportedConstruct(s.lineno, what)
        if defs[0].decorator_list:
            raise UnsupportedConstruct(defs[0].lineno, "decorator")

    conv = _Canonicalizer(frozenset(api_whitelist), strict)
    root = node("FunctionDef", None, conv.body(defs[0].body))
    return CanonicalAst.from_root(question_id, root)


def parse_program(source: str, canon: CanonConfig, question_id: str = "") -> CanonicalAst:
    """strip_noise + parse under one canonicalization config."""
    return parse(strip_noise(source), canon.api_whitelist, question_id, canon.strict)


def opaque_count(ast: CanonicalAst) -> int:
    return sum(1 for n in walk(ast.root) if n.kind == "OpaqueStmt")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def node_to_dict(n: AstNode) -> dict:
    d: dict = {"kind": n.kind}
    if n.label is not None:
        d["label"] = n.label
    d["children"] = [node_to_dict(c) for c in n.children]
    d["mandatory"] = list(n.mandatory)
    return d


def node_from_dict(d: dict) -> AstNode:
    children = tuple(node_from_dict(c) for c in d.get("children", ()))
    return AstNode(d["kind"], d.get("label"), children, mandatory_mask(d["kind"], len(children)))


@dataclass
class ParsedCorpus:
    canon: CanonConfig
    programs: list[CanonicalAst]

    def digest(self) -> str:
        return self.canon.digest()


def corpus_to_dict(corpus: ParsedCorpus) -> dict:
    return {
        "format": "codeplexity-asts/1",
        "canonicalization": {
            "api_whitelist": sorted(set(corpus.canon.api_whitelist)),
            "strict": corpus.canon.strict,
            "digest": corpus.canon.digest(),
        },
        "programs": [
            {
                "question_id": p.question_id,
                "node_count": p.node_count,
                "root": node_to_dict(p.root),
            }
            for p in corpus.programs
        ],
    }


def corpus_from_dict(d: dict) -> ParsedCorpus:
    canon = CanonConfig(
        tuple(d["canonicalization"]["api_whitelist"]),
        d["canonicalization"]["strict"],
    )
    programs = [
        CanonicalAst.from_root(p["question_id"], node_from_dict(p["root"]))
        for p in d["programs"]
    ]
    return ParsedCorpus(canon, programs)
