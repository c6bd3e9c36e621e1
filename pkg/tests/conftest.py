import pytest

from atpmil.config import RunConfig
from atpmil.data import load_manifest, synthesize_dataset


def tiny_config(**sections) -> RunConfig:
    """Small, fast configuration for smoke-level training tests."""
    base = {
        "synth": {"image_size": 128, "radius": [4.0, 9.0], "vacuole_radius": [2.0, 4.0],
                  "atp_per_area": 80.0},
        "model": {"input_resolution": 128, "channels": [8, 16, 16, 32], "attention_dim": 16,
                  "head_hidden": 16},
        "train": {"epochs": 2, "eval_batch_size": 8},
        "sampler": {"batch_size": 8},
    }
    for name, values in sections.items():
        base.setdefault(name, {}).update(values)
    return RunConfig.from_dict(base)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_wells")
    synthesize_dataset(32, tiny_config().synth, out)
    return load_manifest(out / "manifest.csv")


ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def record():
    """Record one acceptance verdict: ``record(name, passed, detail)``."""

    def _record(name: str, passed: bool, detail: str = ""):
        ACCEPTANCE_RESULTS.append((name, bool(passed), detail))
        print(f"\n[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        assert passed, f"{name}: {detail}"

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
