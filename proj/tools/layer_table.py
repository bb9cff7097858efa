#!/usr/bin/env python3
"""Layer-by-layer accounting of the default student, computed from the layer
list alone (no featherpoint code involved). Prints a markdown table."""

import sys

H, W = (int(sys.argv[1]), int(sys.argv[2])) if len(sys.argv) == 3 else (192, 256)
KIB = 1024
BUDGET = 4404019

# (name, in_c, out_c, kernel, stride, norm, act)
CONVS = [
    ("stem.0", 1, 16, 3, 2, True, True),
    ("stem.1", 16, 32, 3, 2, True, True),
    ("stem.2", 32, 32, 3, 2, True, True),
    ("blocks.0.conv", 32, 32, 3, 1, True, True),
    ("blocks.1.conv", 32, 32, 3, 1, True, True),
    ("blocks.2.conv", 32, 32, 3, 1, True, True),
    ("det.0", 32, 32, 3, 1, True, True),
    ("det.1", 32, 64, 1, 1, False, False),
    ("desc.0", 32, 32, 3, 1, True, True),
    ("desc.1", 32, 64, 1, 1, False, False),
]

# Execution list: (op, inputs, output, elems, macs)
steps = []
elems = {"input": H * W}
h, w = H, W
cur = "input"
rows = []
params = 0
int8_weights = 0
macs_total = 0


def conv(spec, src, hw):
    global params, int8_weights
    name, ci, co, k, s, norm, act = spec
    hh, ww = hw
    ho, wo = (hh + 2 * (k // 2) - k) // s + 1, (ww + 2 * (k // 2) - k) // s + 1
    p = co * ci * k * k + co + (2 * co if norm else 0)
    params += p
    int8_weights += p + 4 * co
    m = co * ho * wo * ci * k * k
    n_out = co * ho * wo
    out = name + ".conv"
    steps.append(("conv2d", [src], out, n_out, m))
    elems[out] = n_out
    layer_macs = m
    if norm:
        steps.append(("affine_channel", [out], name + ".norm", n_out, n_out))
        elems[name + ".norm"] = n_out
        out = name + ".norm"
        layer_macs += n_out
    if act:
        steps.append(("relu", [out], name + ".act", n_out, 0))
        elems[name + ".act"] = n_out
        out = name + ".act"
    rows.append((name, f"{ci}->{co}", k, s, f"{ho}x{wo}", p, layer_macs))
    return out, (ho, wo)


hw = (h, w)
for spec in CONVS[:6]:
    cur, hw = conv(spec, cur, hw)
feat, feat_hw = cur, hw
d, _ = conv(CONVS[6], feat, feat_hw)
d, _ = conv(CONVS[7], d, feat_hw)
steps.append(("pixel_shuffle", [d], "shuffle", H * W, 0))
elems["shuffle"] = H * W
steps.append(("sigmoid", ["shuffle"], "heatmap", H * W, 0))
elems["heatmap"] = H * W
e, _ = conv(CONVS[8], feat, feat_hw)
e, _ = conv(CONVS[9], e, feat_hw)
n_desc = 64 * feat_hw[0] * feat_hw[1]
steps.append(("l2_normalize", [e], "descmap", n_desc, 0))
elems["descmap"] = n_desc
outputs = {"heatmap", "descmap"}

macs_total = sum(s[4] for s in steps)

last_use = {}
for i, (_, ins, _, _, _) in enumerate(steps):
    for t in ins:
        last_use[t] = i


def peak(bpe):
    best, best_step = 0, 0
    for i, (_, _, out, _, _) in enumerate(steps):
        live = 0
        for t, n in elems.items():
            born = -1 if t == "input" else next(j for j, s in enumerate(steps) if s[2] == t)
            dies = len(steps) if t in outputs else last_use.get(t, born)
            if born <= i <= dies:
                live += n
        if live * bpe > best:
            best, best_step = live * bpe, i
    return best, best_step


print(f"Input 1x1x{H}x{W}\n")
print("| layer | channels | k | stride | output | params | MACs (conv + norm) |")
print("|---|---|---|---|---|---|---|")
for r in rows:
    print("| " + " | ".join(str(x) for x in r) + " |")
print()
pf, sf = peak(4)
pi, si = peak(1)
print(f"- parameters: {params}")
print(f"- MACs: {macs_total}")
print(f"- float32 weights: {4 * params} B ({4 * params / KIB:.2f} KiB)")
print(f"- int8 weights (1 B per parameter, 4 B scale per conv output channel): {int8_weights} B "
      f"({int8_weights / KIB:.2f} KiB)")
print(f"- peak activations float32: {pf} B ({pf / KIB:.2f} KiB) at step {sf} ({steps[sf][0]} -> {steps[sf][2]})")
print(f"- peak activations int8: {pi} B ({pi / KIB:.2f} KiB) at step {si}")
print(f"- int8 budget margin against {BUDGET} B: {BUDGET - int8_weights - pi} B")
print(f"- float32 budget margin against {BUDGET} B: {BUDGET - 4 * params - pf} B")
