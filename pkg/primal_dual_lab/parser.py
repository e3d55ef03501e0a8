"""
Contains the expression grammar used to describe user-defined problems.

Expressions are scalar formulas over variables x1..xd, for example
``x1^2 + 2*x2 - sin(x1)``. The grammar, from loosest to tightest binding:

    additive       := multiplicative (("+" | "-") multiplicative)*
    multiplicative := unary (("*" | "/") unary)*
    unary          := "-" unary | power
    power          := primary ("^" unary)?
    primary        := NUMBER | VARIABLE | FUNCTION "(" additive ")" | "(" additive ")"

`^` is right-associative and binds tighter than unary minus, so ``-x1^2``
parses as ``-(x1^2)`` and ``x1^-2`` as ``x1^(-2)``. Supported functions are
sin, cos, exp, log and sqrt. Trees are immutable and compare structurally.
"""

import math
import re
from dataclasses import dataclass
from typing import FrozenSet, List, Tuple, Union

from .errors import ExpressionSyntaxError, UnknownIdentifierError, VariableIndexError

FUNCTIONS: FrozenSet[str] = frozenset({"sin", "cos", "exp", "log", "sqrt"})
BINARY_SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
_SYMBOL_TO_BINARY = {symbol: name for name, symbol in BINARY_SYMBOLS.items()}

_TOKEN_PATTERN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)
_VARIABLE_PATTERN = re.compile(r"x(\d+)")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or a name from FUNCTIONS
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # a key of BINARY_SYMBOLS
    left: "Node"
    right: "Node"


Node = Union[Const, Var, Unary, Binary]


@dataclass(frozen=True)
class ExprTree:
    """
    A parsed expression together with the dimension of its owning problem.

    Attributes:
        root: The root node.
        d: Number of primal variables the expression may reference.
    """

    root: Node
    d: int

    def variables(self) -> FrozenSet[int]:
        """Returns the set of variable indices used by the tree."""
        found = set()
        stack: List[Node] = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Var):
                found.add(node.index)
            elif isinstance(node, Unary):
                stack.append(node.operand)
            elif isinstance(node, Binary):
                stack.extend((node.left, node.right))
        return frozenset(found)

    @property
    def max_index(self) -> int:
        """Largest variable index used, 0 for a constant expression."""
        return max(self.variables(), default=0)

    def to_text(self) -> str:
        return to_text(self.root)

    def __str__(self) -> str:
        return self.to_text()


def to_text(node: Node) -> str:
    """
    Serializes a node back to grammar text.

    Binary operations are fully parenthesized and constants use ``repr`` so
    that parsing the output yields a structurally identical tree.

    Args:
        node: The node to print.

    Returns:
        Expression text accepted by `parse_expression`.
    """
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Unary):
        inner = to_text(node.operand)
        if node.op == "neg":
            return f"(-({inner}))"
        return f"{node.op}({inner})"
    return f"({to_text(node.left)} {BINARY_SYMBOLS[node.op]} {to_text(node.right)})"


@dataclass(frozen=True)
class _Token:
    kind: str  # "number", "ident", "op" or "end"
    text: str
    offset: int  # byte offset into the source


class ExpressionParser:
    """
    Recursive-descent parser for scalar expressions over x1..xd.

    Attributes:
        d: The primal dimension; variables above it are rejected.
    """

    def __init__(self, d: int) -> None:
        """
        Initializes the parser for a given dimension.

        Args:
            d: Number of primal variables, at least 1.
        """
        if d < 1:
            raise ValueError(f"dimension must be positive, got {d}")
        self.d = d
        self._tokens: List[_Token] = []
        self._pos = 0

    def _tokenize(self, text: str) -> List[_Token]:
        """
        Splits the text into tokens, recording byte offsets.

        Args:
            text: The expression source.

        Returns:
            The token list, terminated by an "end" token.
        """
        tokens: List[_Token] = []
        pos = 0
        while pos < len(text):
            match = _TOKEN_PATTERN.match(text, pos)
            offset = len(text[:pos].encode("utf-8"))
            if match is None:
                raise ExpressionSyntaxError(f"unexpected character {text[pos]!r}", offset)
            kind = match.lastgroup
            if kind != "ws":
                tokens.append(_Token(kind, match.group(), offset))
            pos = match.end()
        tokens.append(_Token("end", "", len(text.encode("utf-8"))))
        return tokens

    def _peek(self) -> _Token:
        return self._tokens[self._pos]

    def _advance(self) -> _Token:
        token = self._tokens[self._pos]
        self._pos += 1
        return token

    def _expect(self, text: str) -> None:
        token = self._advance()
        if token.text != text:
            found = "end of input" if token.kind == "end" else repr(token.text)
            raise ExpressionSyntaxError(f"expected {text!r}, found {found}", token.offset)

    def _parse_additive(self) -> Node:
        left = self._parse_multiplicative()
        while self._peek().text in ("+", "-"):
            symbol = self._advance().text
            right = self._parse_multiplicative()
            left = Binary(_SYMBOL_TO_BINARY[symbol], left, right)
        return left

    def _parse_multiplicative(self) -> Node:
        left = self._parse_unary()
        while self._peek().text in ("*", "/"):
            symbol = self._advance().text
            right = self._parse_unary()
            left = Binary(_SYMBOL_TO_BINARY[symbol], left, right)
        return left

    def _parse_unary(self) -> Node:
        if self._peek().text == "-":
            self._advance()
            return Unary("neg", self._parse_unary())
        return self._parse_power()

    def _parse_power(self) -> Node:
        base = self._parse_primary()
        if self._peek().text == "^":
            self._advance()
            # Exponent goes through _parse_unary, which makes ^ right-associative.
            return Binary("pow", base, self._parse_unary())
        return base

    def _parse_primary(self) -> Node:
        token = self._advance()
        if token.kind == "number":
            value = float(token.text)
            if not math.isfinite(value):
                raise ExpressionSyntaxError(f"numeric literal {token.text!r} overflows", token.offset)
            return Const(value)
        if token.kind == "ident":
            return self._parse_identifier(token)
        if token.text == "(":
            inner = self._parse_additive()
            self._expect(")")
            return inner
        if token.kind == "end":
            raise ExpressionSyntaxError("unexpected end of input", token.offset)
        raise ExpressionSyntaxError(f"unexpected token {token.text!r}", token.offset)

    def _parse_identifier(self, token: _Token) -> Node:
        """
        Resolves an identifier to a variable or a function call.

        Args:
            token: The identifier token, already consumed.

        Returns:
            A Var node or a Unary function node.
        """
        variable = _VARIABLE_PATTERN.fullmatch(token.text)
        if variable:
            index = int(variable.group(1))
            if index < 1 or index > self.d:
                raise VariableIndexError(index, self.d)
            return Var(index)
        if token.text in FUNCTIONS:
            self._expect("(")
            argument = self._parse_additive()
            self._expect(")")
            return Unary(token.text, argument)
        raise UnknownIdentifierError(token.text, token.offset)

    def parse(self, text: str) -> ExprTree:
        """
        Parses expression text into an immutable tree.

        Args:
            text: The expression source, non-empty.

        Returns:
            The parsed ExprTree bound to this parser's dimension.

        Raises:
            ExpressionSyntaxError: On malformed input, with the byte offset.
            UnknownIdentifierError: On names that are neither xK nor a function.
            VariableIndexError: When a variable index is outside 1..d.
        """
        if not text or not text.strip():
            raise ExpressionSyntaxError("empty expression", 0)
        self._tokens = self._tokenize(text)
        self._pos = 0
        root = self._parse_additive()
        trailing = self._peek()
        if trailing.kind != "end":
            raise ExpressionSyntaxError(f"unexpected token {trailing.text!r}", trailing.offset)
        return ExprTree(root=root, d=self.d)


def parse_expression(text: str, d: int) -> ExprTree:
    """
    Parses a scalar expression over x1..xd.

    Args:
        text: Expression source, e.g. ``"x1^2 + 2*x2"``.
        d: The primal dimension.

    Returns:
        The parsed ExprTree.
    """
    return ExpressionParser(d).parse(text)


def reparse(tree: ExprTree) -> Tuple[str, ExprTree]:
    """Prints a tree and parses the text again; used by round-trip checks."""
    text = tree.to_text()
    return text, parse_expression(text, tree.d)
