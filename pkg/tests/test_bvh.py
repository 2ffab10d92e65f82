"""BVH construction, refit, and query coverage against brute force."""

import numpy as np

from intact.bvh import AABBTree, _expand_bits, morton_codes, swept_boxes


def brute_force_pairs(qlo, qhi, blo, bhi):
    # oracle: all-pairs box overlap test
    hits = set()
    for i in range(len(qlo)):
        for j in range(len(blo)):
            if np.all(qlo[i] <= bhi[j]) and np.all(qhi[i] >= blo[j]):
                hits.add((i, j))
    return hits


def slow_expand(v):
    out = 0
    for bit in range(21):
        out |= ((v >> bit) & 1) << (3 * bit)
    return out


def random_boxes(rng, n, scale=1.0):
    lo = rng.uniform(-1.0, 1.0, (n, 3))
    return lo, lo + rng.uniform(0.0, scale, (n, 3))


def test_expand_bits_matches_bit_loop(rng):
    vals = rng.integers(0, 2**21, 200)
    fast = _expand_bits(vals.astype(np.uint64))
    for v, f in zip(vals, fast):
        assert int(f) == slow_expand(int(v))


def test_morton_orders_along_axis():
    pts = np.array([[x, 0.0, 0.0] for x in np.linspace(0, 1, 17)])
    codes = morton_codes(pts)
    assert np.all(np.diff(codes.astype(np.int64)) > 0)


def test_children_stored_before_parents(rng):
    lo, hi = random_boxes(rng, 64)
    tree = AABBTree(lo, hi)
    internal = tree.prim < 0
    idx = np.arange(len(tree.prim))
    assert np.all(tree.left[internal] < idx[internal])
    assert np.all(tree.right[internal] < idx[internal])
    assert tree.root == len(tree.prim) - 1


def test_leaves_cover_all_primitives(rng):
    lo, hi = random_boxes(rng, 33)
    tree = AABBTree(lo, hi)
    leaves = tree.prim[tree.prim >= 0]
    assert sorted(leaves) == list(range(33))


def test_query_matches_brute_force(rng):
    for n in (1, 2, 7, 50, 200):
        blo, bhi = random_boxes(rng, n, scale=0.5)
        qlo, qhi = random_boxes(rng, 40, scale=0.5)
        tree = AABBTree(blo, bhi)
        qi, pi = tree.query(qlo, qhi)
        got = set(zip(qi.tolist(), pi.tolist()))
        assert len(got) == len(qi)  # no duplicate reports
        assert got == brute_force_pairs(qlo, qhi, blo, bhi)


def test_refit_matches_fresh_build_queries(rng):
    blo, bhi = random_boxes(rng, 80)
    tree = AABBTree(blo, bhi)
    blo2, bhi2 = random_boxes(rng, 80)
    tree.refit(blo2, bhi2)
    qlo, qhi = random_boxes(rng, 25)
    qi, pi = tree.query(qlo, qhi)
    assert set(zip(qi.tolist(), pi.tolist())) == brute_force_pairs(qlo, qhi, blo2, bhi2)


def test_root_box_bounds_everything(rng):
    blo, bhi = random_boxes(rng, 60)
    tree = AABBTree(blo, bhi)
    assert np.all(tree.lo[tree.root] <= blo.min(axis=0) + 1e-12)
    assert np.all(tree.hi[tree.root] >= bhi.max(axis=0) - 1e-12)


def test_clustered_codes_terminate():
    # centroid clusters whose codes differ only in high bits once stressed
    # integer-exact split searches; must build and answer queries correctly
    base = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5],
                     [1.0, 1.0, 1.0], [0.0, 1.0, 1.0], [1.0, 0.0, 1.0]])
    centers = np.repeat(base, 2, axis=0)
    lo = centers - 0.5
    hi = centers + 0.5
    tree = AABBTree(lo, hi)
    qi, pi = tree.query(lo, hi)
    assert set(zip(qi.tolist(), pi.tolist())) == brute_force_pairs(lo, hi, lo, hi)


def test_identical_centers_degenerate_build():
    lo = np.zeros((9, 3))
    hi = np.ones((9, 3))
    tree = AABBTree(lo, hi)
    qi, pi = tree.query(np.array([[0.5, 0.5, 0.5]]), np.array([[0.6, 0.6, 0.6]]))
    assert sorted(pi) == list(range(9))


def test_empty_tree():
    tree = AABBTree(np.empty((0, 3)), np.empty((0, 3)))
    qi, pi = tree.query(np.zeros((2, 3)), np.ones((2, 3)))
    assert len(qi) == 0 and len(pi) == 0


def test_swept_boxes_cover_both_ends(rng):
    lo0, hi0 = random_boxes(rng, 10)
    lo1, hi1 = random_boxes(rng, 10)
    lo, hi = swept_boxes(lo0, hi0, lo1, hi1, pad=0.25)
    assert np.all(lo <= lo0 - 0.25 + 1e-15) and np.all(lo <= lo1 - 0.25 + 1e-15)
    assert np.all(hi >= hi0 + 0.25 - 1e-15) and np.all(hi >= hi1 + 0.25 - 1e-15)
