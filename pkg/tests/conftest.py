"""Shared fixtures: synthetic textures, scenes, and stimulus sets."""

import numpy as np
import pytest

from metamerlab.image import ImageBuffer, save_png
from metamerlab.stimuli import ingest_stimulus_set

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def record_criterion(name: str, passed: bool, detail: str = "") -> bool:
    """Register an acceptance-criterion outcome for the run summary."""
    ACCEPTANCE_RESULTS[name] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE_RESULTS.items():
        status = "PASS" if ok else "FAIL"
        line = f"{status}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


def filtered_noise_texture(seed, n=64, band=0.12, width=0.06, contrast=0.18):
    """Stationary bandpass-noise texture in [0, 1]."""
    rng = np.random.default_rng(seed)
    u = np.fft.fft2(rng.standard_normal((n, n)))
    fy = np.fft.fftfreq(n)[:, None]
    fx = np.fft.fftfreq(n)[None, :]
    r = np.sqrt(fx ** 2 + fy ** 2)
    filt = np.exp(-((r - band) / width) ** 2) + 0.3 * np.exp(-(r / 0.03) ** 2)
    tex = np.fft.ifft2(u * filt).real
    tex = 0.5 + contrast * tex / tex.std()
    return ImageBuffer(np.clip(tex, 0.02, 0.98))


def structured_scene(seed, n=32):
    """Coarse blobs plus fine texture: something texforms can preserve and
    scramble."""
    rng = np.random.default_rng(seed)
    u = np.fft.fft2(rng.standard_normal((n, n)))
    fy = np.fft.fftfreq(n)[:, None]
    fx = np.fft.fftfreq(n)[None, :]
    r = np.sqrt(fx ** 2 + fy ** 2)
    coarse = np.fft.ifft2(u * np.exp(-(r / 0.04) ** 2)).real
    fine = np.fft.ifft2(np.fft.fft2(rng.standard_normal((n, n)))
                        * np.exp(-((r - 0.25) / 0.08) ** 2)).real
    img = 0.5 + 0.25 * coarse / coarse.std() + 0.12 * fine / fine.std()
    return ImageBuffer(np.clip(img, 0.02, 0.98))


def build_noise_stimulus_set(root, n_classes=1, n_ids=12, families=("texform",),
                             seeds=(0, 1), side=16, rng_seed=0):
    """Disk stimulus set of random images (for trial machinery, not observers)."""
    rng = np.random.default_rng(rng_seed)
    for c in range(n_classes):
        for i in range(n_ids):
            d = root / f"class{c}" / f"img{i:03d}"
            save_png(ImageBuffer(rng.random((side, side))), d / "original.png")
            for fam in families:
                for s in seeds:
                    save_png(ImageBuffer(rng.random((side, side))),
                             d / f"{fam}_seed{s}.png")
    return ingest_stimulus_set(root)


@pytest.fixture(scope="session")
def noise_set_80(tmp_path_factory):
    """A set large enough for 72- and 80-trial cells."""
    root = tmp_path_factory.mktemp("noise80")
    return build_noise_stimulus_set(root, n_ids=84,
                                    families=("texform", "standard"), side=8)
