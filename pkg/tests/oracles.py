"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the package under test.
"""

import math


def naive_dft(samples):
    """Full complex DFT by the defining sum, as a list of (re, im)."""
    n = len(samples)
    out = []
    for k in range(n):
        re = im = 0.0
        for t, x in enumerate(samples):
            angle = 2.0 * math.pi * k * t / n
            re += x * math.cos(angle)
            im -= x * math.sin(angle)
        out.append((re, im))
    return out


def naive_positive_energies(samples):
    """|X_k|^2 for k = 1 .. floor(T/2)."""
    coeffs = naive_dft(samples)
    return [re * re + im * im for re, im in coeffs[1 : len(samples) // 2 + 1]]


def naive_wmf(samples):
    energies = naive_positive_energies(samples)
    total = sum(energies)
    if total == 0.0:
        return float(len(energies))
    return sum(e * (i + 1) for i, e in enumerate(energies)) / total


def set_metrics(pred, gt):
    """IoU, Dice, recall, precision from two Python sets of voxel indices."""
    inter = len(pred & gt)
    union = len(pred | gt)

    def ratio(a, b):
        return 1.0 if b == 0 else a / b

    return {
        "iou": ratio(inter, union),
        "dice": ratio(2 * inter, len(pred) + len(gt)),
        "recall": ratio(inter, len(gt)),
        "precision": ratio(inter, len(pred)),
    }


def brute_force_sweep(values, gt):
    """Per-threshold metrics over k / 50, k = 0..50, by explicit voxel loops.

    ``values`` and ``gt`` are flat Python sequences.
    """
    truth = {i for i, g in enumerate(gt) if g}
    rows = []
    for k in range(51):
        tau = k / 50
        pred = {i for i, v in enumerate(values) if float(v) > tau}
        rows.append((tau, set_metrics(pred, truth)))
    return rows
