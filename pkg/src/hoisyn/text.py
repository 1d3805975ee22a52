"""Whitespace/punctuation tokenizer with a persistent vocabulary.

Token ids: 0 is PAD, 1 is UNK; corpus tokens follow in first-seen order.
Encoding truncates to ``max_len`` and pads with PAD; unseen tokens map to
UNK so generation-time prompts never crash the pipeline.
"""

import json
import re

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def tokenize(text):
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens=()):
        self.token_to_id = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for tok in tokens:
            self.add(tok)

    def add(self, token):
        if token not in self.token_to_id:
            self.token_to_id[token] = len(self.token_to_id)
        return self.token_to_id[token]

    def __len__(self):
        return len(self.token_to_id)

    def __contains__(self, token):
        return token in self.token_to_id

    @classmethod
    def from_texts(cls, texts):
        vocab = cls()
        for text in texts:
            for tok in tokenize(text):
                vocab.add(tok)
        return vocab

    def encode(self, text, max_len):
        """Tokenize and map to ids, truncated/padded to exactly ``max_len``."""
        ids = [self.token_to_id.get(tok, UNK_ID) for tok in tokenize(text)]
        ids = ids[:max_len]
        ids += [PAD_ID] * (max_len - len(ids))
        return ids

    def to_json(self):
        items = sorted(self.token_to_id.items(), key=lambda kv: kv[1])
        return {"tokens": [tok for tok, _ in items]}

    @classmethod
    def from_json(cls, payload):
        tokens = payload["tokens"]
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary json must start with pad/unk tokens")
        vocab = cls()
        for tok in tokens[2:]:
            vocab.add(tok)
        return vocab

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, ensure_ascii=False, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))
