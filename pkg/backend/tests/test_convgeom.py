import numpy as np
from hypothesis import given, settings as hsettings
from hypothesis import strategies as st
from pytest import mark, raises
from scipy.spatial import ConvexHull

from varcalc.core.exceptions import DimensionMismatchError, InputError
from varcalc.services.convgeom import (
    ConeSpec,
    Membership,
    NotMember,
    Polyhedron,
    Polytope,
    PolytopeUnion,
    canonical_union,
    clip_polytope,
    convex_hull,
    hausdorff_distance,
    minkowski_membership,
    minkowski_sum,
    slice_polyhedron,
)

SQUARE = Polytope([[-1, -1], [1, -1], [1, 1], [-1, 1]])


def test_convex_hull_drops_interior_points_and_sorts():
    hull = convex_hull([[1, 1], [0, 0], [0.5, 0.5], [1, 0], [0, 1], [0.2, 0.7]])
    np.testing.assert_allclose(hull.vertices, [[0, 0], [0, 1], [1, 0], [1, 1]])


def test_convex_hull_of_collinear_points():
    hull = convex_hull([[0, 0], [1, 1], [2, 2], [0.5, 0.5]])
    np.testing.assert_allclose(hull.vertices, [[0, 0], [2, 2]])


def test_convex_hull_in_one_dimension():
    np.testing.assert_allclose(convex_hull([[3], [-1], [0.5]]).vertices, [[-1], [3]])


def test_polytope_rejects_empty_and_non_finite():
    with raises(InputError):
        Polytope(np.zeros((0, 2)))
    with raises(InputError):
        Polytope([[np.inf, 0]])


def test_equals_ignores_vertex_order_and_redundancy():
    other = Polytope([[1, 1], [-1, 1], [0, 0], [-1, -1], [1, -1]])
    assert SQUARE.equals(other)
    assert not SQUARE.equals(SQUARE.scaled(2.0))


def test_canonical_union_drops_contained_parts():
    inner = Polytope([[0, 0], [0.5, 0], [0, 0.5]])
    far = Polytope([[5, 5], [6, 5]])
    union = canonical_union([inner, SQUARE, far])
    assert len(union.parts) == 2
    assert union.equals(PolytopeUnion((far, SQUARE)))


def test_union_parts_must_share_dimension():
    with raises(DimensionMismatchError):
        PolytopeUnion((Polytope([[0.0]]), SQUARE))


def test_minkowski_sum_of_segments_is_square():
    a = Polytope([[-1, 0], [1, 0]])
    b = Polytope([[0, -1], [0, 1]])
    assert minkowski_sum([a, b]).equals(SQUARE)


def test_membership_reports_scale_of_each_term():
    out = minkowski_membership([2, 1], Polytope([[0, 1]]), scaled_terms=[Polytope([[1, 0]])])
    assert isinstance(out, Membership)
    assert abs(out.scales[0] - 2) <= 1e-9
    assert abs(out.weights["base"].sum() - 1) <= 1e-9


def test_membership_margin_when_outside():
    out = minkowski_membership([3, 0], SQUARE)
    assert isinstance(out, NotMember)
    assert out.margin > 0


def test_membership_dimension_mismatch():
    with raises(DimensionMismatchError):
        minkowski_membership([0, 0, 0], SQUARE)


def test_cone_with_lineality():
    cone = ConeSpec(2, generators=[[1, 0]], lineality=[[0, 1]])
    assert cone.contains([3, -5])
    assert not cone.contains([-1, 0])
    assert abs(cone.distance([-1, 0]) - 1) <= 1e-9
    assert isinstance(minkowski_membership([3, -5], Polytope([[0, 0]]), cones=[cone]), Membership)


def test_cone_canonical_normalizes_generators():
    cone = ConeSpec(2, generators=[[2, 0], [1, 0], [0, 0]]).canonical()
    np.testing.assert_allclose(cone.generators, [[1, 0]])
    assert ConeSpec.zero(2).is_trivial()
    assert not ConeSpec.full(2).is_trivial()


@mark.parametrize("a  b  distance".split(),
                  (([[0], [1]], [[0], [2]], 1.0),
                   ([[0, 0]], [[3, 0]], 3.0),
                   ([[-1, -1], [1, -1], [1, 1], [-1, 1]], [[-1, -1], [1, -1], [1, 1], [-1, 1]], 0.0)))
def test_hausdorff_between_polytopes(a, b, distance):
    assert abs(hausdorff_distance(Polytope(a), Polytope(b)) - distance) <= 1e-9


def test_hausdorff_between_unions():
    two_points = PolytopeUnion((Polytope([[-1.0]]), Polytope([[1.0]])))
    segment = PolytopeUnion((Polytope([[-1.0], [1.0]]),))
    assert abs(hausdorff_distance(two_points, segment) - 1.0) <= 1e-9


def test_clip_square_by_halfplane():
    clipped = clip_polytope(SQUARE, [[1, 0]], [0])
    assert clipped.equals(Polytope([[-1, -1], [0, -1], [0, 1], [-1, 1]]))


def test_clip_square_to_nothing():
    assert clip_polytope(SQUARE, [[1, 0]], [-2]) is None


def test_clip_segment():
    clipped = clip_polytope(Polytope([[0, 0], [2, 2]]), [[1, 0]], [1])
    assert clipped.equals(Polytope([[0, 0], [1, 1]]))


def test_slice_with_recession_direction():
    sliced = slice_polyhedron([[1]], [[1]], [[2], [1]], [[-1], [0]], [0])
    assert isinstance(sliced, Polyhedron)
    np.testing.assert_allclose(sliced.base.vertices, [[3]])
    np.testing.assert_allclose(sliced.cone.generators, [[1]])
    assert not sliced.is_bounded
    assert sliced.contains_point([5])
    assert not sliced.contains_point([2])


def test_slice_empty():
    assert slice_polyhedron([[1]], [[1]], np.zeros((0, 1)), np.zeros((0, 1)), [2]) is None


def _inside_by_qhull(vertices: np.ndarray, x: np.ndarray):
    eq = ConvexHull(vertices).equations
    signed = eq[:, :-1] @ x + eq[:, -1]
    return bool(np.all(signed <= 0)), float(np.min(np.abs(signed)))


@given(st.integers(0, 2 ** 32 - 1), st.booleans())
@hsettings(max_examples=200, deadline=None)
def test_membership_matches_qhull(seed, as_sum):
    rng = np.random.default_rng(seed)
    first = rng.normal(size=(5, 2))
    target = rng.normal(size=2) * 1.5
    if as_sum:
        second = rng.normal(size=(4, 2)) * 0.5
        vertices = (first[:, None, :] + second[None, :, :]).reshape(-1, 2)
        out = minkowski_membership(target, Polytope(first), fixed_terms=[(1.0, Polytope(second))])
    else:
        vertices = first
        out = minkowski_membership(target, Polytope(first))
    inside, gap = _inside_by_qhull(vertices, target)
    if gap < 1e-3:
        return
    assert isinstance(out, Membership) == inside
