"""Pure-Python fallback for the compiled kernels in ``_core.pyx``.

Same arithmetic in the same order, so results match the compiled backend
bit for bit given the same bit generator state.
"""

import math

import numpy as np

_BLOCK = 4096


def ssa_lv(c1, c2, c3, x1, x2, grid, max_events, bit_generator):
    """Returns (values[T, 2], n_events, exploded)."""
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    ngrid = grid.shape[0]
    out = np.empty((ngrid, 2), dtype=np.float64)
    # Generator.random(n) draws the same doubles as n sequential next_double
    # calls. On exit the generator is rewound to the last block start and
    # only the draws actually used are replayed, leaving the bit generator
    # in the same state as the compiled kernel would.
    gen = np.random.Generator(bit_generator)
    saved = bit_generator.state
    buf = gen.random(_BLOCK)
    k = 0
    gi = 0
    events = 0
    exploded = False
    t = 0.0
    x1 = int(x1)
    x2 = int(x2)
    log = math.log
    grid_l = grid.tolist()
    while True:
        a1 = c1 * x1
        a2 = c2 * x1 * x2
        a3 = c3 * x2
        a0 = a1 + a2 + a3
        if a0 <= 0.0:
            break
        if k == _BLOCK:
            saved = bit_generator.state
            buf = gen.random(_BLOCK)
            k = 0
        u = buf[k]
        k += 1
        tnext = t - log(1.0 - u) / a0
        while gi < ngrid and grid_l[gi] < tnext:
            out[gi, 0] = x1
            out[gi, 1] = x2
            gi += 1
        if gi == ngrid:
            break
        if events >= max_events:
            exploded = True
            break
        if k == _BLOCK:
            saved = bit_generator.state
            buf = gen.random(_BLOCK)
            k = 0
        r = buf[k] * a0
        k += 1
        if r < a1:
            x1 += 1
        elif r < a1 + a2:
            x1 -= 1
            x2 += 1
        else:
            x2 -= 1
        t = tnext
        events += 1
    while gi < ngrid:
        out[gi, 0] = x1
        out[gi, 1] = x2
        gi += 1
    bit_generator.state = saved
    if k:
        gen.random(k)
    return out, events, exploded


def ma2_loglik_banded(th1, th2, x):
    x = np.ascontiguousarray(x, dtype=np.float64).tolist()
    p = len(x)
    g0 = 1.0 + th1 * th1 + th2 * th2
    g1 = th1 * (1.0 + th2)
    g2 = th2
    d1 = d2 = e1 = 0.0
    z1 = z2 = 0.0
    logdet = 0.0
    quad = 0.0
    for i in range(p):
        f = 0.0
        e = 0.0
        if i >= 2:
            f = g2 / d2
        if i >= 1:
            e = (g1 - f * e1) / d1
        s = g0 - e * e - f * f
        if not s > 0.0:
            return -math.inf
        d = math.sqrt(s)
        z = (x[i] - e * z1 - f * z2) / d
        logdet += math.log(d)
        quad += z * z
        d2, d1, e1 = d1, d, e
        z2, z1 = z1, z
    return -0.5 * p * math.log(2.0 * 3.141592653589793) - logdet - 0.5 * quad
