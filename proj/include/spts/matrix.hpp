#pragma once

#include "spts/common.hpp"

#include <cstddef>
#include <vector>

namespace spts {

// Dense row-major f32 matrix. Dot products accumulate in f64 so results do not
// depend on blocking or traversal order.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float & at(size_t r, size_t c) { return data[r * cols + c]; }
    float at(size_t r, size_t c) const { return data[r * cols + c]; }

    float * row(size_t r) { return data.data() + r * cols; }
    const float * row(size_t r) const { return data.data() + r * cols; }

    bool same_shape(const Matrix & o) const { return rows == o.rows && cols == o.cols; }
};

struct SvdFactors {
    Matrix u;                // rows x r, orthonormal columns
    std::vector<float> s;    // r singular values, descending
    Matrix v;                // r x cols
};

Matrix matmul(const Matrix & a, const Matrix & b);

// b is accessed as its transpose: result = a * b^T.
Matrix matmul_transposed(const Matrix & a, const Matrix & b);

Matrix transpose(const Matrix & m);

// softmax(scale * x) with max-subtraction.
std::vector<float> softmax_row(const std::vector<float> & x, float scale);

// Indices of the k largest values, ties broken by smaller index, returned
// sorted ascending by index.
std::vector<size_t> topk_indices(const std::vector<float> & scores, size_t k);

// Rank-r truncated SVD: w ~= U diag(S) V. Deterministic sign convention: the
// largest-magnitude entry of each column of U is non-negative.
SvdFactors svd_truncated(const Matrix & w, size_t r);

std::vector<float> silu(const std::vector<float> & x);
void silu_inplace(Matrix & m);

std::vector<float> rmsnorm(const std::vector<float> & x, const std::vector<float> & gain, float eps);

double cosine_sim(const std::vector<float> & a, const std::vector<float> & b);

void check_finite(const Matrix & m, const char * what);

} // namespace spts
