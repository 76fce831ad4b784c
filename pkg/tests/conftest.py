import math

import numpy as np
import pytest

from gric.probability import default_scale_table, uniform_factorized_cdf
from gric.gsdn import GsdnParams
from gric.weights import GSDN_NAMES, Dims, ModelWeights, generate_weights, layer_table


@pytest.fixture(scope="session")
def desk_weights():
    """Seeded M=32 model shared across tests."""
    return generate_weights(32, seed=7)


@pytest.fixture(scope="session")
def tiny_weights():
    """Seeded M=8 model for fast pipeline tests."""
    return generate_weights(8, seed=3)


def _softplus_inv(y: float) -> float:
    return math.log(math.expm1(y))


def _wire_passthrough_pn(tensors, name: str, m: int, hidden: int, slope: float,
                         sigma_raw: float, src_offset: int = 0, mu_zero: bool = False):
    """Wire a parameter network so mu copies m input channels and sigma is constant.

    Identity survives the two hidden leaky-ReLU layers via +/- channel pairs:
    leaky(x) - leaky(-x) = (1 + slope) * x.
    """
    a = 1.0 / (1.0 + slope)
    w0 = tensors[f"{name}_0.w"]
    w1 = tensors[f"{name}_1.w"]
    w2 = tensors[f"{name}_2.w"]
    if not mu_zero:
        for c in range(m):
            w0[2 * c, src_offset + c, 0, 0] = 1.0
            w0[2 * c + 1, src_offset + c, 0, 0] = -1.0
            w1[2 * c, 2 * c, 0, 0] = a
            w1[2 * c, 2 * c + 1, 0, 0] = -a
            w1[2 * c + 1, 2 * c, 0, 0] = -a
            w1[2 * c + 1, 2 * c + 1, 0, 0] = a
            w2[c, 2 * c, 0, 0] = a
            w2[c, 2 * c + 1, 0, 0] = -a
    tensors[f"{name}_2.b"][m:] = sigma_raw


def crafted_weights(latent_support: int = 255) -> ModelWeights:
    """Hand-wired M=4 model with interpretable behavior.

    Encoder samples the green channel on the 16-pixel lattice (latent =
    16*G - offsets per channel), the context model predicts the left
    neighbor with sigma ~= 1, the reference model extracts the matched
    latent gated by S*U with sigma ~= 3, and stage 3 falls back to the
    (0, 3) marginal.  The decoder nearest-neighbor upsamples channel 0.
    """
    d = Dims(latent_channels=4, hyper_channels=2, hyper_out_channels=8,
             patch_k=3, latent_support=latent_support, hyper_support=63)
    tensors = {}
    for ld in layer_table(d):
        tensors[ld.name + ".w"] = np.zeros(ld.weight_shape, np.float32)
        tensors[ld.name + ".b"] = np.zeros((ld.spec.out_channels,), np.float32)
    t = tensors
    # green channel, center tap, gain 2 per downsampling stage
    t["enc0.w"][0, 1, 2, 2] = 2.0
    t["enc1.w"][0, 0, 2, 2] = 2.0
    t["enc2.w"][0, 0, 2, 2] = 2.0
    gains = (2.0, 1.5, 1.0, 0.5)
    offsets = (-4.0, -3.0, -2.0, -1.0)
    for c in range(4):
        t["enc3.w"][c, 0, 2, 2] = gains[c]
        t["enc3.b"][c] = offsets[c]
    # decoder: 2x nearest-neighbor upsampling of channel 0, rescaled to [0, 1]
    for name in ("dec0", "dec1", "dec2"):
        for ky, kx in ((2, 2), (2, 3), (3, 2), (3, 3)):
            t[name + ".w"][0, 0, ky, kx] = 1.0
    for rgb in range(3):
        for ky, kx in ((2, 2), (2, 3), (3, 2), (3, 3)):
            t["dec3.w"][0, rgb, ky, kx] = 1.0 / 16.0
        t["dec3.b"][rgb] = 0.25
    for c in range(4):
        t["ctx.w"][c, c, 2, 1] = 1.0   # left neighbor (kept by the exclusive mask)
        t["refm.w"][c, c, 1, 1] = 1.0  # center of the matched window
    _wire_passthrough_pn(t, "pn1", 4, d.pn_hidden, d.slope, _softplus_inv(1.0))
    _wire_passthrough_pn(t, "pn2", 4, d.pn_hidden, d.slope, _softplus_inv(3.0))
    _wire_passthrough_pn(t, "pn3", 4, d.pn_hidden, d.slope, _softplus_inv(3.0), mu_zero=True)
    gsdn = {
        gname: GsdnParams(
            beta=np.ones(2, np.float32),
            gamma=np.zeros((2, 2), np.float32),
            nu=np.zeros(2, np.float32),
            tau=np.zeros((2, 2), np.float32),
        )
        for gname in GSDN_NAMES
    }
    return ModelWeights(
        dims=d,
        tensors=tensors,
        gsdn=gsdn,
        scale_table=default_scale_table(),
        factorized=uniform_factorized_cdf(2, 63),
    )


@pytest.fixture(scope="session")
def crafted():
    return crafted_weights()


def duplicated_texture_image(rng=None) -> np.ndarray:
    """64x96 RGB image whose right 48 columns exactly duplicate the left 48.

    On the crafted weights this duplicates latent columns 0-2 into 3-5, so
    the masked patch at (r, 4) equals the one at (r, 1) exactly.
    """
    rng = rng or np.random.default_rng(11)
    tile = rng.uniform(0.05, 0.95, (3, 64, 48)).astype(np.float32)
    return np.concatenate([tile, tile], axis=2)
