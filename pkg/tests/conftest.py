import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def naive_conv(x, weight, bias, stride=1, dilation=1, padding=(0, 0)):
    """Seven nested loops, no vectorisation."""
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    ph, pw = padding
    ho = (h + 2 * ph - dilation * (kh - 1) - 1) // stride + 1
    wo = (w + 2 * pw - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = float(bias[oc])
                    for ic in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                r = i * stride + di * dilation - ph
                                s = j * stride + dj * dilation - pw
                                if 0 <= r < h and 0 <= s < w:
                                    acc += float(x[b, ic, r, s]) * float(weight[oc, ic, di, dj])
                    out[b, oc, i, j] = acc
    return out


TOY_SEEDS = (0, 1, 2)
VARIANTS = (("1.5", "1.25"), ("1.1", "1.25"), ("1.25", "1.5"))


@pytest.fixture(scope="session")
def toy_runs():
    """Trained toy models, each pruned with three factor schedules and fine-tuned (about 90 s)."""
    from prunebench.experiments import prune_and_finetune, train_toy_model

    runs = []
    for seed in TOY_SEEDS:
        task = train_toy_model(seed)
        runs.append((task, {(sh, dp): prune_and_finetune(task, sh, dp) for sh, dp in VARIANTS}))
    return runs


_acceptance_lines: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def record(number: int, passed: bool | None, text: str) -> bool:
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        _acceptance_lines.append(f"criterion {number:>2}: {status}  {text}")
        print(_acceptance_lines[-1])
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
