import numpy as np
import pytest
from hypothesis import settings

from neatread.model import ModelConfig, NeatModel

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_model(vocab=9, N=5, H=4, d=3, A=3, seed=0, **kw):
    cfg = ModelConfig(vocab_size=vocab, emb_dim=d, reader_cells=H, decoder_cells=kw.pop("Hd", H),
                      att_hidden=A, seq_len=N, init_scale=kw.pop("scale", 0.5), **kw)
    return NeatModel(cfg, seed=seed)


@pytest.fixture
def tiny():
    return tiny_model()


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record_criterion(number, title, ok, detail):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
    ACCEPTANCE[number] = line
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
