"""Token vocabulary with reserved control ids.

Ids 0..3 are pad/bos/eos/unk. Text is whitespace-tokenized and
lowercased. The bos id doubles as the text encoder's head token (the
pooled position feeding the length regulator); it never collides with
content because encoder inputs place it only at position 0.
"""

from __future__ import annotations

from ..errors import VocabularyOverflow
from ..metrics import tokenize

PAD, BOS, EOS, UNK = 0, 1, 2, 3
_SPECIALS = ["<pad>", "<bos>", "<eos>", "<unk>"]


class Vocabulary:
    def __init__(self, tokens):
        """tokens: full id->token list including the four specials."""
        if list(tokens[:4]) != _SPECIALS:
            raise ValueError("vocabulary must start with the reserved specials")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    @property
    def pad_id(self):
        return PAD

    @property
    def bos_id(self):
        return BOS

    @property
    def eos_id(self):
        return EOS

    @property
    def unk_id(self):
        return UNK

    @property
    def head_id(self):
        return BOS

    @classmethod
    def build(cls, texts, max_size=None):
        """Vocabulary from training texts, insertion-ordered, specials first."""
        seen = dict.fromkeys(tok for text in texts for tok in tokenize(text))
        tokens = _SPECIALS + list(seen)
        if max_size is not None and len(tokens) > max_size:
            raise VocabularyOverflow(
                f"{len(tokens)} tokens exceed the configured cap {max_size}")
        return cls(tokens)

    def encode(self, text):
        """Token ids for a text; unknown words map to unk."""
        return [self.index.get(tok, UNK) for tok in tokenize(text)]

    def decode(self, ids):
        """Text from ids, dropping control tokens."""
        return " ".join(self.tokens[i] for i in ids
                        if i >= 4 and i < len(self.tokens))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.strip()])
