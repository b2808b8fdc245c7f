"""Dataset side of the bridge: the instruct/output CSV contract and tokenization."""

from __future__ import annotations

import csv
from pathlib import Path

from tokenizers import Tokenizer
from tokenizers.models import BPE
from tokenizers.pre_tokenizers import ByteLevel
from tokenizers.trainers import BpeTrainer
from transformers import PreTrainedTokenizerFast

from trainer_bridge import BridgeError

CSV_HEADER = ("instruct", "output")
PAD_TOKEN = "<|pad|>"
EOS_TOKEN = "<|eos|>"

PROMPT_TEMPLATE = "### Instruct: {instruct}\n### Output: "


def read_pairs(path: str | Path) -> list[tuple[str, str]]:
    """Read instruct/output rows; the header is part of the contract."""
    file_path = Path(path)
    if not file_path.is_file():
        raise BridgeError(f"dataset not found: {file_path}")
    with open(file_path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise BridgeError(f"{file_path}: empty dataset") from None
        if tuple(header) != CSV_HEADER:
            raise BridgeError(
                f"{file_path}: expected header {list(CSV_HEADER)}, found {header}"
            )
        pairs = []
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise BridgeError(f"{file_path}: row {reader.line_num} has {len(row)} fields")
            pairs.append((row[0], row[1]))
    if not pairs:
        raise BridgeError(f"{file_path}: no data rows")
    return pairs


def format_example(instruct: str, output: str) -> str:
    return PROMPT_TEMPLATE.format(instruct=instruct) + output


def build_tokenizer(texts: list[str], vocab_size: int = 384) -> PreTrainedTokenizerFast:
    """Train a byte-level BPE tokenizer on the corpus; fully offline."""
    tokenizer = Tokenizer(BPE(unk_token=None))
    tokenizer.pre_tokenizer = ByteLevel(add_prefix_space=False)
    trainer = BpeTrainer(
        vocab_size=vocab_size,
        special_tokens=[PAD_TOKEN, EOS_TOKEN],
        initial_alphabet=ByteLevel.alphabet(),
        show_progress=False,
    )
    tokenizer.train_from_iterator(texts, trainer)
    return PreTrainedTokenizerFast(
        tokenizer_object=tokenizer, pad_token=PAD_TOKEN, eos_token=EOS_TOKEN
    )


def encode_corpus(
    pairs: list[tuple[str, str]],
    tokenizer: PreTrainedTokenizerFast,
    max_length: int = 256,
) -> list[list[int]]:
    eos_id = tokenizer.eos_token_id
    encoded = []
    for instruct, output in pairs:
        ids = tokenizer(format_example(instruct, output))["input_ids"][: max_length - 1]
        encoded.append(ids + [eos_id])
    return encoded
