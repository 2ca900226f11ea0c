import pytest

from afemeig import mesh


def grid_square(n, width=1.0):
    """n-by-n grid of squares on [0,width]^2, each split along the same
    diagonal (the classic structured right-triangle mesh)."""
    h = width / n
    coords = [(i * h, j * h) for j in range(n + 1) for i in range(n + 1)]
    tris = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b = a + 1
            c = a + n + 2
            d = a + n + 1
            tris.append((a, b, c))
            tris.append((a, c, d))
    return mesh.from_arrays(coords, tris)


def two_triangle_square():
    return mesh.from_arrays([(0, 0), (1, 0), (1, 1), (0, 1)],
                            [(0, 1, 2), (0, 2, 3)])


@pytest.fixture(scope="session")
def square_problem():
    from afemeig import problem
    return problem.builtin("square")
