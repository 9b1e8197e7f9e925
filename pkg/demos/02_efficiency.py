# OPs and storage accounting.
# Run: python3 demos/02_efficiency.py

# %%
from bitdiff.config import RunConfig
from bitdiff.efficiency import PUBLISHED_ARCH, ArchSpec, conv_bops, report, unet_arch

# one 448->448 3x3 conv at 32x32, both operands 1 bit
print("BOPs:", conv_bops(448, 448, 3, 32, 32, 1, 1))

# %% published totals for the large W1A1 model and its FP baseline
r = report(ArchSpec.load(PUBLISHED_ARCH))
print("OPs: %.3e" % r["totals"]["ops"])
print("OPs saving: %.1fx, storage saving: %.1fx" % (r["savings"]["ops_ratio"], r["savings"]["size_ratio"]))

# %% the desk-scale U-Net, FP vs W1A1, layer by layer
spec = RunConfig().unet_spec()
bi = unet_arch(spec.replace(mode="binary"), 16)
fp = unet_arch(spec.replace(mode="fp"), 16)
r = report(bi, fp)
for layer in r["per_layer"]:
    if layer["bops"]:
        print(f"{layer['name']:22s} bops={layer['bops']:>12.0f} flops={layer['flops']:>9.0f}")
print("size %.4f MiB vs %.4f MiB" % (r["totals"]["size_mb"], r["baseline"]["totals"]["size_mb"]))
print("savings:", {k: round(v, 2) for k, v in r["savings"].items()})
# conv_in / conv_out, norms and embeddings stay full precision, which caps the ratio at this size
