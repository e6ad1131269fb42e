#!/usr/bin/env python3
"""Contextual token embeddings for the engage embedding cache.

Single text (the protocol used by the C++ backend):
    contextual_embed.py MODEL TEXT_FILE OUT_VEC

Batch prefill of the cache from pairs files:
    contextual_embed.py --prefill pairs.jsonl [more.jsonl ...] --model MODEL --cache-dir DIR

Vectors are the final hidden layer, one row per word piece, special tokens
removed. The .vec layout is int32 token count, int32 dimension, then
little-endian float32 values token by token.
"""

import argparse
import hashlib
import json
import os
import struct
import sys

import numpy as np

_SPACE = " \t\n\r\f\v"


def backend_id(model, dimension):
    safe = "".join(c if c.isascii() and (c.isalnum() or c in "-.") else "_" for c in model)
    return f"contextual-{safe}-{dimension}"


def write_vec(path, rows):
    rows = np.ascontiguousarray(rows, dtype="<f4")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(struct.pack("<ii", rows.shape[0], rows.shape[1]))
        f.write(rows.tobytes())
    os.replace(tmp, path)


class Encoder:
    def __init__(self, model):
        import torch
        from transformers import AutoModel, AutoTokenizer

        self.torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model)
        self.model = AutoModel.from_pretrained(model)
        self.model.eval()
        self.dimension = self.model.config.hidden_size

    def embed(self, text):
        enc = self.tokenizer(text, return_tensors="pt", truncation=True, max_length=512,
                             return_special_tokens_mask=True)
        special = enc.pop("special_tokens_mask")[0].bool()
        with self.torch.no_grad():
            hidden = self.model(**enc).last_hidden_state[0]
        keep = ~special
        if not bool(keep.any()):
            keep = special
        return hidden[keep].numpy()


def texts_of(paths):
    seen = set()
    for path in paths:
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                for key in ("query", "response"):
                    text = record[key].strip(_SPACE)
                    if text and text not in seen:
                        seen.add(text)
                        yield text


def prefill(args):
    encoder = Encoder(args.model)
    root = os.path.join(args.cache_dir, backend_id(args.model, encoder.dimension))
    os.makedirs(root, exist_ok=True)
    written = 0
    for text in texts_of(args.prefill):
        target = os.path.join(root, hashlib.sha256(text.encode("utf-8")).hexdigest() + ".vec")
        if os.path.exists(target):
            continue
        write_vec(target, encoder.embed(text))
        written += 1
    print(f"{written} new cache entries under {root}")


def main(argv):
    if argv and argv[0] == "--prefill":
        parser = argparse.ArgumentParser()
        parser.add_argument("--prefill", nargs="+", required=True)
        parser.add_argument("--model", default="bert-base-uncased")
        parser.add_argument("--cache-dir", default=os.environ.get("ENGAGE_CACHE_DIR", ".engage_cache"))
        prefill(parser.parse_args(argv))
        return 0
    if len(argv) != 3:
        print(__doc__, file=sys.stderr)
        return 64
    model, text_file, out_vec = argv
    with open(text_file, encoding="utf-8") as f:
        text = f.read()
    write_vec(out_vec, Encoder(model).embed(text))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
