"""
Haar subbands and WaveConv
==========================

A single-level 2-D Haar analysis splits an image into four half-size
subbands.  The transform is orthonormal, so energy is conserved and the
inverse reconstructs the input exactly.  WaveConv keeps only the LL band.
"""

import numpy as np

from wavedistill.data import SynthSpec, generate_dataset
from wavedistill.tensor import Tensor
from wavedistill.wavelet import FILTER_BANK, dwt2_forward, dwt2_inverse, subband_energies, waveconv_downsample

# the four 2x2 analysis kernels
for name, k in FILTER_BANK.items():
    print(name, k.tolist())

# one synthetic "face": identity lives in low spatial frequencies
ds = generate_dataset(SynthSpec(num_identities=2, samples_per_identity=2))
img = ds.images[0, 0]

bands = dwt2_forward(Tensor(img[None, None]))
print("subband shapes:", [b.shape for b in bands])

# energy shares: nearly everything sits in LL
e = subband_energies(img)
total = sum(e.values())
for name, v in e.items():
    print(f"{name}: {v / total:.4f}")
print("Parseval error:", abs(total - np.sum(img ** 2)) / np.sum(img ** 2))

# perfect reconstruction
back = dwt2_inverse(bands).data[0, 0]
print("max reconstruction error:", np.abs(back - img).max())

# WaveConv is the LL band, i.e. twice the 2x2 block mean
ll = waveconv_downsample(Tensor(img[None, None])).data[0, 0]
print("WaveConv == 2 x block mean:", np.allclose(ll, 2 * img.reshape(16, 2, 16, 2).mean(axis=(1, 3))))
