# cython: boundscheck=False, wraparound=False, cdivision=True
"""Row scatter-add over directed edge lists.

The aggregation inner loop of the graph encoder: for every position ``e``,
``out[put[e], :] += values[take[e], :]``. Kept in C because the numpy
fallback (``np.add.at``) first materializes a ``(num_edges, width)`` gather
and is an order of magnitude slower on large edge lists. Additions happen
in edge order, matching the fallback exactly.
"""

cimport numpy as cnp

cnp.import_array()


def scatter_rows(const cnp.float64_t[:, ::1] values,
                 const cnp.int64_t[::1] take,
                 const cnp.int64_t[::1] put,
                 cnp.float64_t[:, ::1] out):
    cdef Py_ssize_t e, j, s, d
    cdef Py_ssize_t n_edges = take.shape[0]
    cdef Py_ssize_t width = values.shape[1]
    for e in range(n_edges):
        s = take[e]
        d = put[e]
        for j in range(width):
            out[d, j] += values[s, j]
