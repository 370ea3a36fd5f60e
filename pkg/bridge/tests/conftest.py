import pytest
import torch
from tokenizers import Tokenizer
from tokenizers.models import WordLevel
from tokenizers.pre_tokenizers import Whitespace
from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

WORDS = [
    "<bos>",
    "<unk>",
    "the",
    "a",
    "cat",
    "dog",
    "runs",
    "sits",
    "fast",
    "slow",
    "and",
    ".",
]


def build_checkpoint(path, seed):
    """A loadable GPT-2-style checkpoint with a 12-word tokenizer."""
    vocab = {w: i for i, w in enumerate(WORDS)}
    tok = Tokenizer(WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = Whitespace()
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok, bos_token="<bos>", unk_token="<unk>"
    )
    fast.save_pretrained(path)
    torch.manual_seed(seed)
    config = GPT2Config(
        vocab_size=len(vocab),
        n_positions=64,
        n_embd=32,
        n_layer=2,
        n_head=2,
        bos_token_id=0,
        eos_token_id=0,
    )
    GPT2LMHeadModel(config).save_pretrained(path)
    return path


@pytest.fixture(scope="session")
def checkpoint_root(tmp_path_factory):
    """Two revisions of the tiny model sharing one tokenizer."""
    root = tmp_path_factory.mktemp("ckpt")
    build_checkpoint(root / "step0", seed=1)
    build_checkpoint(root / "step1000", seed=2)
    return root
