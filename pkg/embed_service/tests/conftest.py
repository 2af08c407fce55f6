import pytest


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """A self-contained GPT-2-shaped checkpoint small enough for tests.

    Built locally (BPE tokenizer trained on coordinate strings, randomly
    initialised weights) so no network or model hub is needed; the service
    only cares that it is a loadable causal LM.
    """
    import torch
    from tokenizers import Tokenizer, models, pre_tokenizers, trainers
    from transformers import (
        GPT2Config,
        GPT2LMHeadModel,
        PreTrainedTokenizerFast,
    )

    path = tmp_path_factory.mktemp("tiny-ckpt")

    tok = Tokenizer(models.BPE(unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    trainer = trainers.BpeTrainer(
        vocab_size=384,
        special_tokens=["<unk>", "<eos>"],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
    )
    corpus = [
        f"Trajectory: ({116.3 + i / 997:.5f}, {39.9 + i / 1009:.5f}), "
        f"({116.2 + i / 991:.5f}, {40.0 - i / 983:.5f})"
        for i in range(64)
    ]
    corpus += ["Destination (116.3262, 40.0002)", "0123456789 .,()- =>"]
    tok.train_from_iterator(corpus, trainer)
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, unk_token="<unk>",
                                   eos_token="<eos>", pad_token="<eos>")
    fast.save_pretrained(path)

    torch.manual_seed(1234)
    config = GPT2Config(
        vocab_size=tok.get_vocab_size(),
        n_positions=256,
        n_embd=32,
        n_layer=2,
        n_head=2,
        bos_token_id=1,
        eos_token_id=1,
    )
    GPT2LMHeadModel(config).save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def loaded_client(tiny_checkpoint):
    """TestClient against a service that has loaded the tiny checkpoint."""
    from fastapi.testclient import TestClient

    from embed_service import ServiceConfig, create_app

    config = ServiceConfig(model_name=tiny_checkpoint, max_batch=8,
                           max_tokens=64, token=None)
    app = create_app(config)
    with TestClient(app) as client:
        yield client
