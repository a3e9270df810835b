"""Layout encoding algebra: roots, partitions, equivalence, warp geometry."""

from __future__ import annotations

import pytest

from tilec.ir import TilingHint
from tilec.layouts import (
    BlockedEncoding,
    DotOperandEncoding,
    LayoutError,
    SliceEncoding,
    WarpGrid,
    equivalent_blocked,
    tile_root,
    warp_coords,
    warp_tile_origin,
)

BLOCKED = BlockedEncoding((32, 64), (8, 4), (1, 0))


def test_blocked_validation():
    with pytest.raises(LayoutError):
        BlockedEncoding((32,), (8, 4), (1, 0))
    with pytest.raises(LayoutError):
        BlockedEncoding((32, 64), (8, 4), (0, 0))
    with pytest.raises(LayoutError):
        DotOperandEncoding(2, BLOCKED)


def test_tile_root_square_default():
    enc = tile_root((256, 256), 32)
    assert enc == BlockedEncoding((32, 64), (8, 4), (1, 0))


def test_tile_root_tall_tile():
    # the square rule favors the most even per-warp aspect ratio
    assert tile_root((128, 64), 8) == BlockedEncoding((32, 32), (4, 2), (1, 0))
    # the attention O tile gets its (8, 1) grid from the horizontal hint
    assert tile_root((128, 64), 8, "horizontal") == BlockedEncoding((16, 64), (8, 1), (1, 0))


def test_tile_root_hints():
    assert tile_root((256, 256), 32, TilingHint.horizontal).warps_per_cta == (32, 1)
    assert tile_root((256, 256), 32, "vertical").warps_per_cta == (1, 32)
    assert tile_root((256, 256), 32, TilingHint.square) == tile_root((256, 256), 32)


def test_tile_root_rank1():
    enc = tile_root((128,), 8)
    assert enc == BlockedEncoding((16,), (8,), (0,))


def test_tile_root_indivisible():
    with pytest.raises(LayoutError):
        tile_root((100, 256), 32, "horizontal")  # 100 % 32 != 0


def test_equivalent_blocked_identity():
    assert equivalent_blocked(BLOCKED, (256, 256)) == BLOCKED


def test_equivalent_blocked_clamps_to_shape():
    # a broadcast source keeps its operand's encoding; the partition of the
    # narrow tensor clamps the per-warp tile to the actual dims
    got = equivalent_blocked(BlockedEncoding((16, 64), (8, 1), (1, 0)), (128, 1))
    assert got == BlockedEncoding((16, 1), (8, 1), (1, 0))


def test_equivalent_blocked_dot_operands():
    a = equivalent_blocked(DotOperandEncoding(0, BLOCKED), (256, 32))
    assert a == BlockedEncoding((32, 32), (8, 4), (1, 0))
    b = equivalent_blocked(DotOperandEncoding(1, BLOCKED), (32, 256))
    assert b == BlockedEncoding((32, 64), (8, 4), (1, 0))


def test_equivalent_blocked_slice():
    # slicing away dim 1 keeps the row partition and renumbers the order
    got = equivalent_blocked(SliceEncoding(1, DotOperandEncoding(0, BLOCKED)), (256,))
    assert got == BlockedEncoding((32,), (8,), (0,))


def test_slice_of_dot_operand_parent_rejected():
    with pytest.raises(LayoutError):
        equivalent_blocked(DotOperandEncoding(0, SliceEncoding(1, BLOCKED)), (4, 4))


def test_warp_coords_order_fastest_first():
    grid = WarpGrid((8, 4), (1, 0))
    assert grid.num_warps == 32
    assert warp_coords(0, grid) == (0, 0)
    assert warp_coords(1, grid) == (0, 1)  # order[0] = 1 varies fastest
    assert warp_coords(4, grid) == (1, 0)
    assert warp_coords(31, grid) == (7, 3)
    with pytest.raises(LayoutError):
        warp_coords(32, grid)


def test_warp_tile_origin():
    # C tile: warp w covers rows 32*(w//4), cols 64*(w%4)
    assert warp_tile_origin(BLOCKED, (256, 256), 0) == (0, 0)
    assert warp_tile_origin(BLOCKED, (256, 256), 1) == (0, 64)
    assert warp_tile_origin(BLOCKED, (256, 256), 4) == (32, 0)
    assert warp_tile_origin(BLOCKED, (256, 256), 31) == (224, 192)


def test_warp_tile_origin_replicates_dot_a():
    # A operand: columns replicated, rows partitioned; warps 0-3 share (0, 0)
    enc = DotOperandEncoding(0, BLOCKED)
    origins = {warp_tile_origin(enc, (256, 32), w) for w in range(4)}
    assert origins == {(0, 0)}
    assert warp_tile_origin(enc, (256, 32), 4) == (32, 0)


def test_warp_tile_origin_replicates_dot_b():
    # B operand: rows replicated, columns partitioned; warps 0,4,... share
    enc = DotOperandEncoding(1, BLOCKED)
    origins = {warp_tile_origin(enc, (32, 256), w) for w in range(0, 32, 4)}
    assert origins == {(0, 0)}
    assert warp_tile_origin(enc, (32, 256), 1) == (0, 64)
