import numpy as np
import pytest

from ssn_lab import LabelMap, LowRankGaussian, PortableRng, mix_seed


def random_instance(seed, max_dim=64, max_rank=8):
    """A random valid distribution with dim <= max_dim, rank <= max_rank."""
    rng = PortableRng(seed)
    num_pixels = int(rng.integers(1, max_dim + 1))
    rank = int(rng.integers(1, max_rank + 1))
    return LowRankGaussian(
        mean=rng.standard_normal(num_pixels),
        factor=rng.standard_normal((num_pixels, rank)),
        diag_raw=rng.standard_normal(num_pixels),
        num_pixels=num_pixels,
        num_classes=1,
        rank=rank,
    )


def random_labels(seed, num_pixels, num_classes, with_mask=False):
    rng = PortableRng(mix_seed(seed, 0x1AB))
    labels = np.asarray(
        rng.integers(0, max(num_classes, 2), size=num_pixels), dtype=np.int64
    )
    mask = None
    if with_mask:
        mask = np.asarray(rng.integers(0, 2, size=num_pixels), dtype=bool)
        if not mask.any():
            mask[0] = True
    return LabelMap(labels=labels, num_classes=num_classes, mask=mask)


@pytest.fixture
def toy_ideal_model():
    """Rank-1 construction whose single latent flips the middle third."""

    def build(amplitude, mean_outer=8.0):
        mean = np.concatenate(
            [np.full(7, mean_outer), np.zeros(7), np.full(7, -mean_outer)]
        )
        factor = np.concatenate([np.zeros(7), np.full(7, amplitude), np.zeros(7)])
        return LowRankGaussian(
            mean=mean,
            factor=factor[:, None],
            diag_raw=np.full(21, -40.0),
            num_pixels=21,
            num_classes=1,
            rank=1,
        )

    return build
