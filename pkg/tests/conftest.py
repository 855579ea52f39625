import numpy as np
import pytest

from speechgl.corpus import build_dataset, parse_manifest

SMALL_MANIFEST = """
sample_rate = 16000
duration_s = 1.5
leading_pause_s = 0.3

[splits]
train = [
  { id = "tr-0", speech_seed = 11, noise_kind = "white", seed = 101, snr_db = 0.0 },
  { id = "tr-1", speech_seed = 12, noise_kind = "multitone-babble", seed = 102, snr_db = 5.0 },
  { id = "tr-2", speech_seed = 13, noise_kind = "white", seed = 103, snr_db = 10.0 },
]
test = [
  { id = "te-0", speech_seed = 21, noise_kind = "pink", seed = 201, snr_db = -5.0 },
  { id = "te-1", speech_seed = 22, noise_kind = "modulated", seed = 202, snr_db = 5.0 },
]
"""


def relerr(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_manifest():
    return parse_manifest(SMALL_MANIFEST)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, small_manifest):
    return build_dataset(small_manifest, tmp_path_factory.mktemp("small") / "ds")


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """The bundled desk corpus, synthesized once per session through the CLI."""
    from speechgl.cli import main

    out = tmp_path_factory.mktemp("desk") / "desk"
    assert main(["synth", "desk", str(out)]) == 0
    return out


ACCEPTANCE_LINES = []


def acceptance_line(criterion, ok, detail):
    """Record one PASS/FAIL line for the end-of-run acceptance summary."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
