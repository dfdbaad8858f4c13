#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "fmmrec/common.hpp"

namespace fmmrec {

// Dense row-major matrix. The scalar type is a template parameter so the
// same kernels can run in float for training and in double for the
// finite-difference checks in the test suite.
template <typename S>
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<S> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, S fill = S(0)) : rows(r), cols(c), data(r * c, fill) {}

    S& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const S& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    S* row_ptr(std::size_t r) { return data.data() + r * cols; }
    const S* row_ptr(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    void fill(S v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

// C += A * B
template <typename S>
void matmul_acc(const Mat<S>& a, const Mat<S>& b, Mat<S>& c) {
    if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols)
        throw ShapeError(cat("matmul shape mismatch: (", a.rows, "x", a.cols, ") * (", b.rows, "x",
                             b.cols, ") -> (", c.rows, "x", c.cols, ")"));
    for (std::size_t i = 0; i < a.rows; ++i) {
        const S* arow = a.row_ptr(i);
        S* crow = c.row_ptr(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            S aik = arow[k];
            if (aik == S(0)) continue;
            const S* brow = b.row_ptr(k);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C += A^T * B
template <typename S>
void matmul_at_b_acc(const Mat<S>& a, const Mat<S>& b, Mat<S>& c) {
    if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
        throw ShapeError("matmul_at_b shape mismatch");
    for (std::size_t k = 0; k < a.rows; ++k) {
        const S* arow = a.row_ptr(k);
        const S* brow = b.row_ptr(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            S aki = arow[i];
            if (aki == S(0)) continue;
            S* crow = c.row_ptr(i);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    }
}

// C += A * B^T
template <typename S>
void matmul_a_bt_acc(const Mat<S>& a, const Mat<S>& b, Mat<S>& c) {
    if (a.cols != b.cols || c.rows != a.rows || c.cols != b.rows)
        throw ShapeError("matmul_a_bt shape mismatch");
    for (std::size_t i = 0; i < a.rows; ++i) {
        const S* arow = a.row_ptr(i);
        S* crow = c.row_ptr(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const S* brow = b.row_ptr(j);
            S acc = S(0);
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            crow[j] += acc;
        }
    }
}

// Xavier/Glorot uniform fill on the interval +-sqrt(6/(rows+cols)).
template <typename S>
void xavier_fill(Mat<S>& m, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (S& v : m.data) v = static_cast<S>(dist(rng));
}

template <typename SDst, typename SSrc>
Mat<SDst> mat_cast(const Mat<SSrc>& src) {
    Mat<SDst> out(src.rows, src.cols);
    for (std::size_t i = 0; i < src.data.size(); ++i)
        out.data[i] = static_cast<SDst>(src.data[i]);
    return out;
}

// Compressed sparse row matrix; used for the user-user similarity graphs.
template <typename S>
struct CsrMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint32_t> indptr;   // rows + 1 entries
    std::vector<std::uint32_t> indices;  // column ids per stored entry
    std::vector<S> weights;

    CsrMatrix() = default;
    CsrMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), indptr(r + 1, 0) {}

    std::size_t nnz() const { return indices.size(); }

    Mat<S> to_dense() const {
        Mat<S> out(rows, cols, S(0));
        for (std::size_t r = 0; r < rows; ++r)
            for (std::uint32_t e = indptr[r]; e < indptr[r + 1]; ++e)
                out(r, indices[e]) = weights[e];
        return out;
    }
};

template <typename SDst, typename SSrc>
CsrMatrix<SDst> csr_cast(const CsrMatrix<SSrc>& src) {
    CsrMatrix<SDst> out(src.rows, src.cols);
    out.indptr = src.indptr;
    out.indices = src.indices;
    out.weights.assign(src.weights.begin(), src.weights.end());
    return out;
}

}  // namespace fmmrec
