"""Single-variable equation language: primitives, pre-order encoding, tokens,
evaluation, canonical simplification, and tree edit distance.

An equation is a complete expression tree over the operator set
[sin, cos, pow, +, *, exp, log], one variable ``x``, and integer constants
2..4 that may appear only as the exponent of ``pow``. Trees are stored as
their pre-order primitive sequence; at most 30 primitives per equation and
no coefficients other than an implicit 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

# Primitive names double as their file/rendering representation.
SIN, COS, EXP, LOG = "sin", "cos", "exp", "log"
ADD, MUL, POW = "add", "mul", "pow"
VAR_X = "x"
CONST_2, CONST_3, CONST_4 = "2", "3", "4"

UNARY_OPS = (SIN, COS, EXP, LOG)
BINARY_OPS = (ADD, MUL, POW)
CONSTANTS = (CONST_2, CONST_3, CONST_4)
OPERATORS = (SIN, COS, POW, ADD, MUL, EXP, LOG)

ARITY = {p: 1 for p in UNARY_OPS}
ARITY.update({p: 2 for p in BINARY_OPS})
ARITY[VAR_X] = 0
ARITY.update({c: 0 for c in CONSTANTS})

CONST_VALUE = {CONST_2: 2, CONST_3: 3, CONST_4: 4}

MAX_PRIMITIVES = 30

# Token dictionary. Reserved ids first, then one id per primitive in a fixed
# published order so that checkpoints and corpora are portable.
PAD, START, END = 0, 1, 2
_TOKEN_ORDER = (ADD, MUL, POW, SIN, COS, EXP, LOG, VAR_X, CONST_2, CONST_3, CONST_4)
PRIMITIVE_TO_TOKEN = {p: i + 3 for i, p in enumerate(_TOKEN_ORDER)}
TOKEN_TO_PRIMITIVE = {t: p for p, t in PRIMITIVE_TO_TOKEN.items()}
VOCAB_SIZE = 3 + len(_TOKEN_ORDER)  # 14


class ExpressionError(ValueError):
    """Base class for malformed equations and token sequences."""


class IncompleteTreeError(ExpressionError):
    """Pre-order sequence ended while operands were still pending."""


class TrailingPrimitivesError(ExpressionError):
    """Pre-order sequence continued after the tree was complete."""


class LengthExceededError(ExpressionError):
    """More than MAX_PRIMITIVES primitives."""


class MisplacedConstError(ExpressionError):
    """A constant somewhere other than the exponent slot of pow."""


class UnknownTokenError(ExpressionError):
    """Token id with no primitive mapping (or a reserved id inside the body)."""


@dataclass(frozen=True)
class Expression:
    """A valid equation as an immutable pre-order primitive sequence.

    Construct via :func:`parse_preorder`; the constructor itself does not
    validate.
    """

    preorder: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.preorder)


@dataclass(frozen=True)
class TokenSequence:
    """Integer encoding of an equation, including START/END specials."""

    tokens: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class EvalResult:
    """Outcome of evaluating an equation at one point.

    ``finite`` is False exactly when evaluation hit a non-finite or
    complex-domain result (log of a non-positive argument, overflow, a
    negative base raised to a fractional power); ``value`` is NaN then.
    """

    value: float
    finite: bool


@dataclass(frozen=True)
class Node:
    """Tree view of an expression; used by simplify and tree edit distance."""

    label: str
    children: tuple["Node", ...] = ()


def parse_preorder(primitives: Sequence[str]) -> Expression:
    """Validate a pre-order primitive list and return it as an Expression.

    Raises IncompleteTreeError, TrailingPrimitivesError, LengthExceededError,
    or MisplacedConstError when the list does not encode exactly one complete
    tree obeying the constant-placement rule.
    """
    prims = tuple(primitives)
    if not prims:
        raise IncompleteTreeError("empty primitive list")
    if len(prims) > MAX_PRIMITIVES:
        raise LengthExceededError(f"{len(prims)} primitives > {MAX_PRIMITIVES}")
    pending = 1
    for i, p in enumerate(prims):
        if p not in ARITY:
            raise ExpressionError(f"unknown primitive {p!r}")
        if pending == 0:
            raise TrailingPrimitivesError(f"tree complete before element {i}")
        pending += ARITY[p] - 1
    if pending != 0:
        raise IncompleteTreeError(f"{pending} operands missing")
    _check_const_placement(prims)
    return Expression(prims)


def _check_const_placement(prims: tuple[str, ...]) -> None:
    # Recursive walk mirroring the tree: a constant is legal only as the
    # second (exponent) child of pow.
    def walk(i: int, const_ok: bool) -> int:
        p = prims[i]
        if p in CONSTANTS:
            if not const_ok:
                raise MisplacedConstError(f"constant {p} at position {i}")
            return i + 1
        if ARITY[p] == 0:
            return i + 1
        if ARITY[p] == 1:
            return walk(i + 1, False)
        j = walk(i + 1, False)
        return walk(j, const_ok=(p == POW))

    walk(0, False)


def to_tree(e: Expression) -> Node:
    """Rebuild the tree view from the pre-order sequence."""

    def build(i: int) -> tuple[Node, int]:
        p = e.preorder[i]
        kids = []
        j = i + 1
        for _ in range(ARITY[p]):
            child, j = build(j)
            kids.append(child)
        return Node(p, tuple(kids)), j

    root, _ = build(0)
    return root


def tree_preorder(node: Node) -> tuple[str, ...]:
    out: list[str] = []

    def walk(n: Node) -> None:
        out.append(n.label)
        for c in n.children:
            walk(c)

    walk(node)
    return tuple(out)


def tokenize(e: Expression) -> TokenSequence:
    """START + body + END under the primitive-to-token dictionary."""
    body = tuple(PRIMITIVE_TO_TOKEN[p] for p in e.preorder)
    return TokenSequence((START,) + body + (END,))


def detokenize(t: TokenSequence | Iterable[int]) -> Expression:
    """Inverse of tokenize, tolerant of the shapes a decoder emits.

    Strips one leading START if present and everything at/after the first
    END, maps the remaining ids to primitives, then parses. Raises
    UnknownTokenError for ids outside the dictionary (reserved ids inside
    the body included) and any parse_preorder error for ill-formed bodies.
    """
    tokens = tuple(t.tokens if isinstance(t, TokenSequence) else t)
    if tokens and tokens[0] == START:
        tokens = tokens[1:]
    if END in tokens:
        tokens = tokens[: tokens.index(END)]
    prims = []
    for tok in tokens:
        if tok not in TOKEN_TO_PRIMITIVE:
            raise UnknownTokenError(f"token id {tok} has no primitive")
        prims.append(TOKEN_TO_PRIMITIVE[tok])
    return parse_preorder(prims)


def evaluate(e: Expression, x: float) -> EvalResult:
    """Evaluate the equation at a point; never raises for finite x.

    pow with a constant exponent uses integer exponentiation, so negative
    bases are fine there; other exponents go through real-valued pow and may
    fall outside the real domain.
    """
    try:
        v = _eval_node(e.preorder, 0, x)[0]
    except (OverflowError, ValueError, ZeroDivisionError):
        return EvalResult(math.nan, False)
    if not math.isfinite(v):
        return EvalResult(math.nan, False)
    return EvalResult(v, True)


def _eval_node(prims: tuple[str, ...], i: int, x: float) -> tuple[float, int]:
    p = prims[i]
    if p == VAR_X:
        return x, i + 1
    if p in CONST_VALUE:
        return float(CONST_VALUE[p]), i + 1
    if p in UNARY_OPS:
        a, j = _eval_node(prims, i + 1, x)
        return _UNARY_FN[p](a), j
    a, j = _eval_node(prims, i + 1, x)
    if p == POW and prims[j] in CONST_VALUE:
        return a ** CONST_VALUE[prims[j]], j + 1
    b, k = _eval_node(prims, j, x)
    if p == ADD:
        return a + b, k
    if p == MUL:
        return a * b, k
    return math.pow(a, b), k


_UNARY_FN = {SIN: math.sin, COS: math.cos, EXP: math.exp, LOG: math.log}


def simplify(e: Expression) -> Expression:
    """Deterministic canonical form.

    Associative add/mul chains are flattened, their operands sorted under a
    total order on pre-order string keys, and re-folded left-associatively.
    No rewrite ever introduces a coefficient, so x+x is canonicalized by
    ordering only. Idempotent.
    """
    return Expression(tree_preorder(_canonical(to_tree(e))))


def _canonical(node: Node) -> Node:
    kids = tuple(_canonical(c) for c in node.children)
    if node.label not in (ADD, MUL):
        return Node(node.label, kids)
    operands: list[Node] = []
    for c in kids:
        operands.extend(_chain_operands(c, node.label))
    operands.sort(key=_sort_key)
    folded = operands[0]
    for o in operands[1:]:
        folded = Node(node.label, (folded, o))
    return folded


def _chain_operands(node: Node, label: str) -> list[Node]:
    if node.label != label:
        return [node]
    out = []
    for c in node.children:
        out.extend(_chain_operands(c, label))
    return out


def _sort_key(node: Node) -> str:
    return " ".join(tree_preorder(node))


def tree_edit_distance(a: Expression, b: Expression) -> int:
    """Minimal number of node insertions/deletions/relabels between the
    canonical trees of two equations (unit costs, ordered trees).

    Zhang-Shasha dynamic program over post-order keyroots. Both inputs are
    simplified first, so the distance is zero iff canonical forms match.
    """
    ta = _Annotated(to_tree(simplify(a)))
    tb = _Annotated(to_tree(simplify(b)))
    n, m = len(ta.labels), len(tb.labels)
    treedist = [[0] * m for _ in range(n)]

    for i in ta.keyroots:
        for j in tb.keyroots:
            _forest_dist(ta, tb, i, j, treedist)
    return treedist[n - 1][m - 1]


class _Annotated:
    """Post-order labels, leftmost-leaf-descendant indices, and keyroots."""

    def __init__(self, root: Node):
        self.labels: list[str] = []
        self.lml: list[int] = []

        def walk(n: Node) -> int:
            first = None
            for c in n.children:
                idx = walk(c)
                if first is None:
                    first = idx
            my = len(self.labels)
            self.labels.append(n.label)
            self.lml.append(first if first is not None else my)
            return self.lml[my]

        walk(root)
        # keyroots: highest post-order index for each distinct leftmost leaf
        seen: dict[int, int] = {}
        for idx, l in enumerate(self.lml):
            seen[l] = idx
        self.keyroots = sorted(seen.values())


def _forest_dist(ta: _Annotated, tb: _Annotated, i: int, j: int,
                 treedist: list[list[int]]) -> None:
    li, lj = ta.lml[i], tb.lml[j]
    m = i - li + 2
    n = j - lj + 2
    fd = [[0] * n for _ in range(m)]
    ioff = li - 1
    joff = lj - 1
    for x in range(1, m):
        fd[x][0] = fd[x - 1][0] + 1
    for y in range(1, n):
        fd[0][y] = fd[0][y - 1] + 1
    for x in range(1, m):
        for y in range(1, n):
            if ta.lml[x + ioff] == li and tb.lml[y + joff] == lj:
                relabel = 0 if ta.labels[x + ioff] == tb.labels[y + joff] else 1
                fd[x][y] = min(fd[x - 1][y] + 1,
                               fd[x][y - 1] + 1,
                               fd[x - 1][y - 1] + relabel)
                treedist[x + ioff][y + joff] = fd[x][y]
            else:
                p = ta.lml[x + ioff] - 1 - ioff
                q = tb.lml[y + joff] - 1 - joff
                fd[x][y] = min(fd[x - 1][y] + 1,
                               fd[x][y - 1] + 1,
                               fd[p][q] + treedist[x + ioff][y + joff])


def render_infix(e: Expression) -> str:
    """Human-readable infix with explicit parentheses, e.g. ``((x^2)+x)``."""

    def emit(n: Node) -> str:
        if n.label == VAR_X or n.label in CONSTANTS:
            return n.label
        if n.label in UNARY_OPS:
            return f"{n.label}({emit(n.children[0])})"
        sym = {ADD: "+", MUL: "*", POW: "^"}[n.label]
        return f"({emit(n.children[0])}{sym}{emit(n.children[1])})"

    return emit(to_tree(e))


def render_preorder(e: Expression) -> str:
    """Space-separated primitive names, the on-disk form."""
    return " ".join(e.preorder)


def parse_rendered_preorder(text: str) -> Expression:
    return parse_preorder(text.split())
