import numpy as np
import pytest
import torch

from avsep.data import generate_toy_corpus, Manifest
from avsep.separator import SeparationModel, SeparatorConfig

_criterion_lines = []


def record_criterion(num: int, detail: str) -> None:
    """Collect one acceptance-criterion result for the terminal summary."""
    line = f"[criterion {num:02d}] PASS  {detail}"
    _criterion_lines.append((num, line))
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_criterion_lines):
            terminalreporter.write_line(line)


def tiny_config(**overrides) -> SeparatorConfig:
    base = dict(kernel_size=4, chunk_len=4, dim=8, content_layers=1, num_blocks=1,
                heads=2, n_max=3, dropout=0.0, visual_dim=6)
    base.update(overrides)
    return SeparatorConfig(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_model(tiny_cfg):
    torch.manual_seed(0)
    return SeparationModel(tiny_cfg)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Small shared corpus: 6 speakers x 3 utterances, 2 s each."""
    root = tmp_path_factory.mktemp("toycorpus")
    manifest_path = generate_toy_corpus(root, n_speakers=6, utts_per_speaker=3,
                                        seed=7, duration=2.0, fps=25.0, visual_dim=12)
    return Manifest.load(manifest_path)


def rand_chunked(shape, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=dtype)


def finite_difference_gradcheck(model, loss_fn, step=1e-5, coords_per_tensor=None,
                                seed=0):
    """Compare autograd gradients against central finite differences.

    Returns the max relative error over the checked coordinates, where
    rel = |fd - autograd| / max(|fd|, |autograd|, 1e-3). The 1e-3 floor
    keeps coordinates whose true gradient is exactly zero (e.g. key
    biases, which softmax shift-invariance kills) from amplifying FD
    roundoff noise (~1e-8) into spurious relative error, while still
    demanding absolute agreement within 1e-7 there. With
    coords_per_tensor None every single parameter coordinate is checked.
    """
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.grad = None
    loss_fn().backward()
    worst = 0.0
    worst_name = None
    for name, p in model.named_parameters():
        flat = p.data.view(-1)
        grad = (p.grad.view(-1) if p.grad is not None
                else torch.zeros_like(flat))
        n = flat.numel()
        if coords_per_tensor is None or coords_per_tensor >= n:
            coords = range(n)
        else:
            coords = rng.choice(n, size=coords_per_tensor, replace=False)
        for i in coords:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + step
                f_plus = float(loss_fn())
                flat[i] = orig - step
                f_minus = float(loss_fn())
                flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            analytic = float(grad[i])
            rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-3)
            if rel > worst:
                worst, worst_name = rel, f"{name}[{i}]"
    return worst, worst_name


def gradcheck_setup(n_speakers=3, n_visual=2, seed=0):
    """Tiny double-precision model + loss closure for gradient checking.

    Geometry: K=4 and T_x=16 give T_a=8 frames; chunk length 4 with hop
    2 gives S=3 chunks.
    """
    from avsep.losses import combined_loss

    torch.manual_seed(seed)
    cfg = tiny_config()
    model = SeparationModel(cfg).double().eval()
    g = torch.Generator().manual_seed(seed + 1)
    mix = torch.randn(16, generator=g, dtype=torch.float64)
    visuals = torch.randn(n_visual, 3, cfg.visual_dim, generator=g, dtype=torch.float64)
    refs = torch.randn(n_speakers, 16, generator=g, dtype=torch.float64)

    def loss_fn():
        est = model(mix, visuals, n_speakers)
        return combined_loss(est, refs, n_visual).total

    return model, loss_fn
