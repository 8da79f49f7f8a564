"""Smoke test for the frenet_py extension module.

Build first:  pip install --no-build-isolation -e crates/py
"""

import math
import random

import frenet_py as fr


def ramp(shape, seed=0):
    rng = random.Random(seed)
    n = math.prod(shape)
    return fr.Tensor(list(shape), [rng.uniform(0.0, 1.0) for _ in range(n)])


def main():
    x = ramp([4, 16, 16])
    re, im = fr.fft2d(x)
    back = fr.ifft2d(re, im)
    assert back.max_abs_diff(x) < 1e-5, "fft round trip"
    sre, sim = fr.fft_shift(*fr.fft_shift(re, im), inverse=True)
    assert sre.max_abs_diff(re) == 0.0 and sim.max_abs_diff(im) == 0.0

    raw = fr.Tensor([1, 32, 32], [64.0 + 959.0 * v for v in ramp([1, 32, 32], 1).tolist()])
    packed = fr.bayer_pack(fr.preprocess_raw(raw))
    assert packed.shape == [4, 16, 16]
    assert fr.bayer_unpack(packed).shape == [1, 32, 32]

    cfg = fr.NetworkConfig.preset("tiny")
    net = fr.Network(cfg, seed=1)
    y = net.forward(x)
    assert y.shape == x.shape
    assert net.infer(x).max_abs_diff(y) == 0.0, "single tile equals forward"
    params, macs, flops = net.cost()
    assert params == net.param_count() and macs > 0 and flops > 0
    names = [name for name, _, _ in net.spectra(x)]
    assert names[0] == "enc1.blk0", names

    assert math.isinf(fr.psnr(x, x))
    assert abs(fr.ssim(raw, raw) - 1.0) < 1e-9

    ok, lines = fr.run_verify("spectral", 0)
    assert ok, "\n".join(lines)

    frenet = fr.NetworkConfig.preset("frenet")
    print(frenet, f"{fr.Network(frenet).param_count() / 1e6:.2f}M params")
    print("smoke ok")


if __name__ == "__main__":
    main()
