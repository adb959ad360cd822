"""
Model-facing encodings of expressions: an arity-tagged prefix token sequence
for the LSTM and a rooted ordered tree of token ids for the TreeLSTM.
"""
import hashlib
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from .exceptions import DataError, ParseError
from .expr import CONST_TOKENS, FUNCTIONS, Expr, ExprStore, Kind, iter_ids

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD = 0
UNK = 1
RESERVED_OFFSET = 2

_NARY_RE = re.compile(r"(ADD|MUL)(\d+)$")
_INT_RE = re.compile(r"-?\d+$")
_FUNC_TOKENS = {name.upper(): name for name in FUNCTIONS}


def node_token(store: ExprStore, ident: int) -> str:
    kind, payload, children = store.node(ident)
    if kind is Kind.INTEGER:
        return str(payload)
    if kind in (Kind.CONST, Kind.VARIABLE):
        return payload
    if kind is Kind.FUNC:
        return payload.upper()
    if kind is Kind.POW:
        return "POW"
    return f"{'ADD' if kind is Kind.ADD else 'MUL'}{len(children)}"


def token_arity(token: str) -> int:
    if token in _FUNC_TOKENS:
        return 1
    if token == "POW":
        return 2
    match = _NARY_RE.match(token)
    if match:
        return int(match.group(2))
    return 0


class Vocabulary:
    """Frozen token <-> id bijection; ids 0 and 1 are PAD and UNK"""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if len(set(tokens)) != len(tokens):
            raise DataError("duplicate token in vocabulary")
        if PAD_TOKEN in tokens or UNK_TOKEN in tokens:
            raise DataError("reserved token listed in vocabulary")
        self.tokens = tokens
        self._ids: Dict[str, int] = {t: i + RESERVED_OFFSET for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens) + RESERVED_OFFSET

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token_of(self, ident: int) -> str:
        if ident == PAD:
            return PAD_TOKEN
        if ident == UNK:
            return UNK_TOKEN
        if not RESERVED_OFFSET <= ident < len(self):
            raise DataError(f"token id {ident} outside the vocabulary")
        return self.tokens[ident - RESERVED_OFFSET]

    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def count_unknown(self, ids: Iterable[int]) -> int:
        return sum(1 for i in ids if i == UNK)

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"missing vocabulary file: {path}")
        return cls([line for line in path.read_text(encoding="utf-8").splitlines() if line])


def build_vocabulary(expressions: Iterable[Expr]) -> Vocabulary:
    """Every token of the given expressions, ids assigned in sorted token order"""
    tokens = set()
    for e in expressions:
        tokens.update(node_token(e.store, ident) for ident in iter_ids(e))
    vocabulary = Vocabulary(sorted(tokens))
    logger.info("Vocabulary has %d tokens (%d reserved)", len(vocabulary), RESERVED_OFFSET)
    return vocabulary


@dataclass(frozen=True)
class TokenSequence:
    ids: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class TreeEncoding:
    """Tree unfolding of an expression; node 0 is the root, nodes in pre-order"""

    token_ids: Tuple[int, ...]
    children: Tuple[Tuple[int, ...], ...]

    def node_count(self) -> int:
        return len(self.token_ids)

    def preorder(self) -> Tuple[int, ...]:
        out: List[int] = []
        stack = [0]
        while stack:
            node = stack.pop()
            out.append(self.token_ids[node])
            stack.extend(reversed(self.children[node]))
        return tuple(out)

    def heights(self) -> Tuple[int, ...]:
        """Leaves have height 0; children always follow their parent"""
        heights = [0] * len(self.token_ids)
        for node in range(len(self.token_ids) - 1, -1, -1):
            if self.children[node]:
                heights[node] = 1 + max(heights[c] for c in self.children[node])
        return tuple(heights)


def encode_sequence(e: Expr, vocab: Vocabulary) -> TokenSequence:
    store = e.store
    ids: List[int] = []
    stack = [e.id]
    while stack:
        ident = stack.pop()
        ids.append(vocab.id_of(node_token(store, ident)))
        stack.extend(reversed(store.node(ident)[2]))
    return TokenSequence(tuple(ids))


def encode_tree(e: Expr, vocab: Vocabulary) -> TreeEncoding:
    """Shared DAG nodes are expanded into separate tree nodes"""
    store = e.store
    token_ids: List[int] = []
    children: List[List[int]] = []
    stack: List[Tuple[int, int]] = [(e.id, -1)]
    while stack:
        ident, parent = stack.pop()
        node = len(token_ids)
        token_ids.append(vocab.id_of(node_token(store, ident)))
        children.append([])
        if parent >= 0:
            children[parent].append(node)
        stack.extend((c, node) for c in reversed(store.node(ident)[2]))
    return TreeEncoding(tuple(token_ids), tuple(tuple(c) for c in children))


def decode_sequence(seq: TokenSequence, vocab: Vocabulary, store: ExprStore) -> Expr:
    """Rebuild the exact node shapes of an encoded expression"""
    ids = seq.ids
    pos = 0

    def read() -> Expr:
        nonlocal pos
        if pos >= len(ids):
            raise ParseError("truncated token sequence", pos)
        token = vocab.token_of(ids[pos])
        pos += 1
        if token in (PAD_TOKEN, UNK_TOKEN):
            raise ParseError(f"cannot decode {token}", pos - 1)
        if _INT_RE.match(token):
            return store.integer(int(token))
        if token in CONST_TOKENS:
            return store.const(token)
        arity = token_arity(token)
        if arity == 0:
            return store.var(token)
        args = tuple(read().id for _ in range(arity))
        if token in _FUNC_TOKENS:
            return store.intern_raw(Kind.FUNC, _FUNC_TOKENS[token], args)
        if token == "POW":
            return store.intern_raw(Kind.POW, None, args)
        return store.intern_raw(Kind.ADD if token.startswith("ADD") else Kind.MUL, None, args)

    result = read()
    if pos != len(ids):
        raise ParseError("trailing tokens after expression", pos)
    return result
