"""Numba kernels for tile-based alpha blending (forward, backward, records).

All kernels are sequential and deterministic: tiles are visited row-major,
pixels row-major inside a tile, and each tile's Gaussian list is pre-sorted
front to back. Constants are passed in so the Python layer owns the contract.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def forward_kernel(
    height,
    width,
    tile_size,
    tiles_x,
    tile_offsets,
    tile_gauss,
    means2d,
    conics,
    alphas,
    colors,
    background,
    alpha_skip,
    alpha_max,
    e_min,
    t_term,
    count_hits,
    image,
    transmit,
    n_contrib,
    last_pos,
    weight_sum,
    hits,
):
    tiles_y = (height + tile_size - 1) // tile_size
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            tid = ty * tiles_x + tx
            start = tile_offsets[tid]
            stop = tile_offsets[tid + 1]
            y0 = ty * tile_size
            x0 = tx * tile_size
            y1 = min(y0 + tile_size, height)
            x1 = min(x0 + tile_size, width)
            for py in range(y0, y1):
                for px in range(x0, x1):
                    t_cur = 1.0
                    wsum = 0.0
                    contrib = 0
                    lastp = 0
                    c0 = 0.0
                    c1 = 0.0
                    c2 = 0.0
                    for k in range(start, stop):
                        if t_cur < t_term:
                            break
                        g = tile_gauss[k]
                        dx = px - means2d[g, 0]
                        dy = py - means2d[g, 1]
                        e = (
                            -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy)
                            - conics[g, 1] * dx * dy
                        )
                        if e < e_min or e > 0.0:
                            continue
                        a = alphas[g] * np.exp(e)
                        if a < alpha_skip:
                            continue
                        if a > alpha_max:
                            a = alpha_max
                        w = a * t_cur
                        c0 += colors[g, 0] * w
                        c1 += colors[g, 1] * w
                        c2 += colors[g, 2] * w
                        wsum += w
                        t_cur *= 1.0 - a
                        contrib += 1
                        lastp = k - start + 1
                        if count_hits:
                            hits[g] += 1
                    image[py, px, 0] = c0 + background[0] * t_cur
                    image[py, px, 1] = c1 + background[1] * t_cur
                    image[py, px, 2] = c2 + background[2] * t_cur
                    transmit[py, px] = t_cur
                    weight_sum[py, px] = wsum
                    n_contrib[py, px] = contrib
                    last_pos[py, px] = lastp


@njit(cache=True)
def backward_kernel(
    height,
    width,
    tile_size,
    tiles_x,
    tile_offsets,
    tile_gauss,
    means2d,
    conics,
    alphas,
    colors,
    background,
    alpha_skip,
    alpha_max,
    e_min,
    transmit,
    last_pos,
    dimage,
    dmeans2d,
    dcov2d,
    dalphas,
    dcolors,
):
    tiles_y = (height + tile_size - 1) // tile_size
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            tid = ty * tiles_x + tx
            start = tile_offsets[tid]
            y0 = ty * tile_size
            x0 = tx * tile_size
            y1 = min(y0 + tile_size, height)
            x1 = min(x0 + tile_size, width)
            for py in range(y0, y1):
                for px in range(x0, x1):
                    lastp = last_pos[py, px]
                    if lastp == 0:
                        continue
                    g0 = dimage[py, px, 0]
                    g1 = dimage[py, px, 1]
                    g2 = dimage[py, px, 2]
                    if g0 == 0.0 and g1 == 0.0 and g2 == 0.0:
                        continue
                    t_after = transmit[py, px]
                    # suffix color sum, seeded with the background term
                    s0 = background[0] * t_after
                    s1 = background[1] * t_after
                    s2 = background[2] * t_after
                    for k in range(start + lastp - 1, start - 1, -1):
                        g = tile_gauss[k]
                        dx = px - means2d[g, 0]
                        dy = py - means2d[g, 1]
                        e = (
                            -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy)
                            - conics[g, 1] * dx * dy
                        )
                        if e < e_min or e > 0.0:
                            continue
                        gauss = np.exp(e)
                        a_raw = alphas[g] * gauss
                        a = a_raw
                        if a > alpha_max:
                            a = alpha_max
                        if a < alpha_skip:
                            continue
                        t_before = t_after / (1.0 - a)
                        inv_om = 1.0 / (1.0 - a)
                        ga = (
                            g0 * (colors[g, 0] * t_before - s0 * inv_om)
                            + g1 * (colors[g, 1] * t_before - s1 * inv_om)
                            + g2 * (colors[g, 2] * t_before - s2 * inv_om)
                        )
                        w = a * t_before
                        dcolors[g, 0] += g0 * w
                        dcolors[g, 1] += g1 * w
                        dcolors[g, 2] += g2 * w
                        if a_raw <= alpha_max:
                            dalphas[g] += ga * gauss
                            gG = ga * alphas[g]
                            v0 = conics[g, 0] * dx + conics[g, 1] * dy
                            v1 = conics[g, 1] * dx + conics[g, 2] * dy
                            dmeans2d[g, 0] += gG * gauss * v0
                            dmeans2d[g, 1] += gG * gauss * v1
                            dcov2d[g, 0] += gG * gauss * 0.5 * v0 * v0
                            dcov2d[g, 1] += gG * gauss * v0 * v1
                            dcov2d[g, 2] += gG * gauss * 0.5 * v1 * v1
                        s0 += colors[g, 0] * w
                        s1 += colors[g, 1] * w
                        s2 += colors[g, 2] * w
                        t_after = t_before


@njit(cache=True)
def records_kernel(
    height,
    width,
    tile_size,
    tiles_x,
    tile_offsets,
    tile_gauss,
    means2d,
    conics,
    alphas,
    alpha_skip,
    alpha_max,
    e_min,
    t_term,
    pixel_offsets,
    rec_gauss,
    rec_weight,
):
    """Fill per-pixel (gaussian, blend weight) records, front-to-back order.

    pixel_offsets is the exclusive row-major cumulative sum of n_contrib.
    """
    tiles_y = (height + tile_size - 1) // tile_size
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            tid = ty * tiles_x + tx
            start = tile_offsets[tid]
            stop = tile_offsets[tid + 1]
            y0 = ty * tile_size
            x0 = tx * tile_size
            y1 = min(y0 + tile_size, height)
            x1 = min(x0 + tile_size, width)
            for py in range(y0, y1):
                for px in range(x0, x1):
                    pos = pixel_offsets[py * width + px]
                    t_cur = 1.0
                    for k in range(start, stop):
                        if t_cur < t_term:
                            break
                        g = tile_gauss[k]
                        dx = px - means2d[g, 0]
                        dy = py - means2d[g, 1]
                        e = (
                            -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy)
                            - conics[g, 1] * dx * dy
                        )
                        if e < e_min or e > 0.0:
                            continue
                        a = alphas[g] * np.exp(e)
                        if a < alpha_skip:
                            continue
                        if a > alpha_max:
                            a = alpha_max
                        rec_gauss[pos] = g
                        rec_weight[pos] = a * t_cur
                        pos += 1
                        t_cur *= 1.0 - a
