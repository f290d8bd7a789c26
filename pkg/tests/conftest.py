import pytest
from hypothesis import settings

from gradnorm import config

settings.register_profile("repo", derandomize=True, deadline=None, max_examples=60)
settings.load_profile("repo")


def small_config(strategy="gradnorm", alpha=0.12, num_tasks=2, sigmas=(1.0, 100.0), steps=60, seed=0,
                 weights=None, **kw):
    """A few-second experiment: narrow dims, short run."""
    cfg = config.ExperimentConfig(
        taskset=config.TaskSetSpec(seed=seed, num_tasks=num_tasks,
                                   sigmas=None if sigmas is None else list(sigmas),
                                   input_dim=12, output_dim=6),
        model=config.ModelSpec(seed=seed, hidden=16, depth=2),
        steps=steps, batch_size=20, eval_every=10, data_seed=seed, test_seed=seed, test_batch_size=50,
    )
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg.with_strategy(strategy, alpha=alpha if strategy == "gradnorm" else None, weights=weights)


@pytest.fixture
def tiny():
    return small_config


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
