#!/usr/bin/env python3
"""Independent reference calculations for the test fixtures.

Everything here is computed from first principles with mpmath at 50 decimal
digits, without touching the Rust implementation. The printed constants are
frozen into the test suite; re-run this script to regenerate them.

Covered fixtures:
  * bilinear input normalization forward on the 2x3 worked example
  * adaptive (DAIN-style) normalization forward with identity weights
  * trainable parameter counts for the default model shapes (shape walk)
  * per-feature z-score statistics of the 2x3 sample
  * scalar Adam walkthrough (two steps, constant gradient)
  * batch-norm running-mean recursion after k identical batches
"""

from mpmath import mp, mpf, sqrt, exp

mp.dps = 50

EPS = mpf("1e-8")  # additive guard on standard deviations


def mean(xs):
    return sum(xs) / len(xs)


def pop_std(xs):
    m = mean(xs)
    return sqrt(sum((x - m) ** 2 for x in xs) / len(xs))


def fmt(x):
    return mp.nstr(x, 17)


def bin_forward_2x3():
    x = [[mpf(1), mpf(2), mpf(3)], [mpf(4), mpf(5), mpf(6)]]
    d, h = 2, 3
    # temporal branch: standardize each row over time
    a = [[None] * h for _ in range(d)]
    for i in range(d):
        mu, s = mean(x[i]), pop_std(x[i])
        for j in range(h):
            a[i][j] = (x[i][j] - mu) / (s + EPS)
    # feature branch: standardize each column over features
    b = [[None] * h for _ in range(d)]
    for j in range(h):
        col = [x[i][j] for i in range(d)]
        mu, s = mean(col), pop_std(col)
        for i in range(d):
            b[i][j] = (x[i][j] - mu) / (s + EPS)
    t = [[a[i][j] + b[i][j] for j in range(h)] for i in range(d)]
    print("# BiN forward, X=[[1,2,3],[4,5,6]], unit scale, zero shift, weights 1/1")
    for name, m in (("A", a), ("B", b), ("T", t)):
        for i in range(d):
            print(f"{name}[{i}] = [{', '.join(fmt(v) for v in m[i])}]")


def dain_forward_identity():
    x = [[mpf(1), mpf(2), mpf(3)], [mpf(4), mpf(5), mpf(6)]]
    d, h = 2, 3
    cbar = [mean([x[i][j] for j in range(h)]) for i in range(d)]
    y = [[x[i][j] - cbar[i] for j in range(h)] for i in range(d)]
    sig = [sqrt(mean([y[i][j] ** 2 for j in range(h)])) for i in range(d)]
    z = [[y[i][j] / (sig[i] + EPS) for j in range(h)] for i in range(d)]
    gate = [1 / (1 + exp(mpf(0))) for _ in range(d)]  # sigmoid(0) with zero gate weights
    t = [[z[i][j] * gate[i] for j in range(h)] for i in range(d)]
    print("# DAIN forward, identity shift/scale weights, zero gate weights")
    for i in range(d):
        print(f"T[{i}] = [{', '.join(fmt(v) for v in t[i])}]")


def zscore_stats_2x3():
    x = [[mpf(1), mpf(2), mpf(3)], [mpf(4), mpf(5), mpf(6)]]
    print("# per-feature z-score statistics of [[1,2,3],[4,5,6]]")
    for i, row in enumerate(x):
        print(f"mean[{i}] = {fmt(mean(row))}, std[{i}] = {fmt(pop_std(row))}")


def tabl_param_count(in_d, in_h, out_d, out_h):
    # left projection + attention mixing (diagonal fixed) + blend scalar
    # + right projection + bias
    return (
        out_d * in_d
        + (in_h * in_h - in_h)
        + 1
        + in_h * out_h
        + out_d * out_h
    )


def bilinear_param_count(in_d, in_h, out_d, out_h):
    return out_d * in_d + in_h * out_h + out_d * out_h


def head_param_count(flat, outputs):
    return outputs * flat + outputs


def shape_walk_counts():
    print("# trainable backbone+head parameter counts (40x10 input)")
    # two-hidden-layer default: bilinear 60x10 -> tabl 120x5 -> 3-way head
    c = (
        bilinear_param_count(40, 10, 60, 10)
        + tabl_param_count(60, 10, 120, 5)
        + head_param_count(120 * 5, 3)
    )
    # one-hidden-layer default: tabl 120x5 -> 3-way head
    b = tabl_param_count(40, 10, 120, 5) + head_param_count(120 * 5, 3)
    # joint direction+horizon head on the one-hidden-layer trunk
    b2 = (
        tabl_param_count(40, 10, 120, 5)
        + head_param_count(120 * 5, 2)
        + head_param_count(120 * 5, 1)
    )
    print(f"two_hidden_softmax3 = {c}")
    print(f"one_hidden_softmax3 = {b}")
    print(f"one_hidden_joint_head = {b2}")
    # normalizer parameter counts at 40x10
    print(f"bin_params = {2 * 40 + 2 * 10 + 2}")
    print(f"dain_params = {3 * 40 * 40 + 40}")
    print(f"bn_params = {2 * 40 * 10}")


def adam_scalar_walkthrough():
    lr, b1, b2, eps = mpf("0.001"), mpf("0.9"), mpf("0.999"), mpf("1e-8")
    g = mpf("0.5")
    p, m, v = mpf(0), mpf(0), mpf(0)
    print("# scalar Adam, g=0.5 constant, lr=0.001, two steps")
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        p = p - lr * mh / (sqrt(vh) + eps)
        print(f"p after step {t} = {fmt(p)}")


def bn_running_mean_recursion():
    m = mpf("0.9")
    mu = mpf("3.5")
    print("# running mean after k identical batches of mean 3.5, momentum 0.9")
    r = mpf(0)
    for k in range(1, 6):
        r = m * r + (1 - m) * mu
        closed = (1 - m ** k) * mu
        print(f"k={k}: recursion {fmt(r)} closed-form {fmt(closed)}")


if __name__ == "__main__":
    bin_forward_2x3()
    print()
    dain_forward_identity()
    print()
    zscore_stats_2x3()
    print()
    shape_walk_counts()
    print()
    adam_scalar_walkthrough()
    print()
    bn_running_mean_recursion()
