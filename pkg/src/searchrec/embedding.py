"""User / product / query-word embeddings and sequence embedding matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass
class SequenceBatch:
    """A left-padded batch of history prefixes.

    Row ``b`` holds its ``lengths[b]`` valid products in the last columns of
    ``products`` (B x T).  In the search scenario ``queries`` is
    B x (T+1) x W: query column ``j`` pairs with product column ``j`` and the
    final column holds the query issued for the target.
    """

    users: np.ndarray
    products: np.ndarray
    lengths: np.ndarray
    targets: np.ndarray | None = None
    negatives: np.ndarray | None = None
    queries: np.ndarray | None = None
    times: np.ndarray | None = None
    query_times: np.ndarray | None = None
    keys: list | None = None

    @property
    def size(self):
        return self.products.shape[0]

    @property
    def width(self):
        return self.products.shape[1]

    @property
    def is_search(self):
        return self.queries is not None

    def product_mask(self):
        T = self.width
        return np.arange(T)[None, :] >= (T - self.lengths)[:, None]

    def query_mask(self):
        T = self.width
        return np.arange(T + 1)[None, :] >= (T - self.lengths)[:, None]

    def query_lengths(self):
        return self.lengths + 1

    def row(self, i):
        def take(a):
            return None if a is None else a[i:i + 1]
        return SequenceBatch(
            users=take(self.users), products=take(self.products), lengths=take(self.lengths),
            targets=take(self.targets), negatives=take(self.negatives), queries=take(self.queries),
            times=take(self.times), query_times=take(self.query_times),
            keys=None if self.keys is None else self.keys[i:i + 1])


def sinusoid(t: int, d: int) -> np.ndarray:
    """Interleaved sin/cos encoding of position ``t`` at frequencies 10000**(-2i/d)."""
    i = np.arange(d) // 2
    angle = t / np.power(10000.0, 2.0 * i / d)
    return np.where(np.arange(d) % 2 == 0, np.sin(angle), np.cos(angle))


def positional_table(max_len: int, d: int) -> np.ndarray:
    return np.stack([sinusoid(t, d) for t in range(max_len)])


def local_positions(lengths, width):
    """Index of each column within its row's valid region (negative on padding)."""
    return np.arange(width)[None, :] - (width - np.asarray(lengths))[:, None]


class Embedder:
    """Looks up embeddings and assembles the per-branch sequence matrices."""

    def __init__(self, user_table: Tensor, product_table: Tensor, word_table: Tensor, max_len: int):
        self.user_table = user_table
        self.product_table = product_table
        self.word_table = word_table
        self.max_len = max_len
        self.d = product_table.shape[1]
        # one extra row: the query branch runs one step past the product branch
        self.positions = positional_table(max_len + 1, self.d).astype(product_table.dtype)

    def embed_query(self, word_ids) -> Tensor:
        """Mean of the non-pad word embeddings; all-pad queries give zeros."""
        ids = np.asarray(word_ids, dtype=np.int64).reshape(1, 1, -1)
        return self.query_embeddings(ids)[0, 0]

    def query_embeddings(self, word_ids: np.ndarray) -> Tensor:
        word_ids = np.asarray(word_ids, dtype=np.int64)
        real = word_ids > 0
        inv = (1.0 / np.maximum(real.sum(axis=-1, keepdims=True), 1)).astype(self.word_table.dtype)
        # mask pad slots explicitly rather than trusting row 0 to stay zero
        words = ag.embedding(self.word_table, word_ids) * Tensor(real[..., None].astype(self.word_table.dtype))
        return words.sum(axis=-2) * Tensor(inv)

    def position_block(self, lengths, width):
        pos = local_positions(lengths, width)
        valid = pos >= 0
        block = self.positions[np.clip(pos, 0, None)]
        return block * valid[..., None]

    def build_sequence_matrix(self, batch: SequenceBatch, branch: str = "product") -> Tensor:
        """B x T x d (product) or B x (T+1) x d (query) embedding matrix.

        Each valid position gets item embedding + user embedding + positional
        encoding; padding positions are exactly zero.
        """
        if batch.width > self.max_len:
            raise ValueError(f"sequence width {batch.width} exceeds max_len {self.max_len}; "
                             "split long sequences before batching")
        if branch == "product":
            items = ag.embedding(self.product_table, batch.products)
            lengths, width, mask = batch.lengths, batch.width, batch.product_mask()
        elif branch == "query":
            if batch.queries is None:
                raise ValueError("query branch requested for a batch without queries")
            items = self.query_embeddings(batch.queries)
            lengths, width, mask = batch.query_lengths(), batch.width + 1, batch.query_mask()
        else:
            raise ValueError(f"unknown branch {branch!r}")
        user = ag.embedding(self.user_table, batch.users).reshape(batch.size, 1, self.d)
        mask_f = mask[..., None].astype(self.product_table.dtype)
        pos = Tensor(self.position_block(lengths, width).astype(self.product_table.dtype))
        return (items + user) * Tensor(mask_f) + pos
