#include "spts/matrix.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#ifdef SPTS_HAVE_EIGEN
#include <Eigen/Dense>
#include <Eigen/SVD>
#endif

using namespace spts;

namespace {

Matrix random_matrix(size_t rows, size_t cols, uint32_t seed, float lo = -1.0f, float hi = 1.0f) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> dist(lo, hi);
    Matrix m(rows, cols);
    for (float & f : m.data) {
        f = dist(rng);
    }
    return m;
}

// independent scalar reference multiply, different accumulation type and loop order
Matrix matmul_oracle(const Matrix & a, const Matrix & b) {
    Matrix out(a.rows, b.cols);
    std::vector<long double> acc(a.rows * b.cols, 0.0L);
    for (size_t k = 0; k < a.cols; ++k) {
        for (size_t i = 0; i < a.rows; ++i) {
            for (size_t j = 0; j < b.cols; ++j) {
                acc[i * b.cols + j] += (long double)a.at(i, k) * (long double)b.at(k, j);
            }
        }
    }
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = float(acc[i]);
    }
    return out;
}

double frob_diff(const Matrix & a, const Matrix & b) {
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = double(a.data[i]) - double(b.data[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

Matrix reconstruct(const SvdFactors & f) {
    Matrix us = f.u;
    for (size_t i = 0; i < us.rows; ++i) {
        for (size_t k = 0; k < f.s.size(); ++k) {
            us.at(i, k) *= f.s[k];
        }
    }
    return matmul(us, f.v);
}

} // namespace

TEST_CASE("matmul identity and hand cases") {
    Matrix id(2, 2);
    id.at(0, 0) = 1;
    id.at(1, 1) = 1;
    Matrix b(2, 2);
    b.data = {3, 4, 5, 6};
    Matrix r = matmul(id, b);
    CHECK(r.data == b.data);  // bit-comparable after f32 rounding

    Matrix a(1, 2);
    a.data = {1, 2};
    Matrix c(2, 1);
    c.data = {3, 4};
    CHECK(matmul(a, c).data[0] == doctest::Approx(11.0f));

    Matrix bad(3, 1);
    CHECK_THROWS_AS((void)matmul(a, bad), Error);
}

TEST_CASE("matmul matches triple-loop oracle on seeded input") {
    Matrix a = random_matrix(4, 4, 101);
    Matrix b = random_matrix(4, 4, 202);
    Matrix got = matmul(a, b);
    Matrix ref = matmul_oracle(a, b);
    for (size_t i = 0; i < got.data.size(); ++i) {
        CHECK(got.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-6));
    }
}

TEST_CASE("matmul identity preserves bits for random w") {
    Matrix w = random_matrix(6, 5, 7);
    Matrix id(6, 6);
    for (size_t i = 0; i < 6; ++i) {
        id.at(i, i) = 1.0f;
    }
    CHECK(matmul(id, w).data == w.data);
}

TEST_CASE("softmax_row basics") {
    auto u = softmax_row({0, 0, 0}, 1.0f);
    for (float v : u) {
        CHECK(v == doctest::Approx(1.0f / 3.0f));
    }

    auto logs = softmax_row({std::log(1.0f), std::log(2.0f), std::log(3.0f)}, 1.0f);
    CHECK(logs[0] == doctest::Approx(1.0 / 6.0));
    CHECK(logs[1] == doctest::Approx(2.0 / 6.0));
    CHECK(logs[2] == doctest::Approx(3.0 / 6.0));

    auto big = softmax_row({1000.0f, 0.0f}, 1.0f);
    CHECK(big[0] == doctest::Approx(1.0));
    CHECK(big[1] == doctest::Approx(0.0));
    CHECK(std::isfinite(big[0]));

    CHECK_THROWS_AS((void)softmax_row({}, 1.0f), Error);
}

TEST_CASE("softmax_row sums to one and preserves order: 1000 trials") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> dist(-20.0f, 20.0f);
    for (int trial = 0; trial < 1000; ++trial) {
        size_t n = 1 + rng() % 32;
        std::vector<float> x(n);
        for (float & v : x) {
            v = dist(rng);
        }
        auto s = softmax_row(x, 0.25f);
        double sum = std::accumulate(s.begin(), s.end(), 0.0);
        CHECK(std::abs(sum - 1.0) < 1e-6);
        size_t ax = std::max_element(x.begin(), x.end()) - x.begin();
        size_t as = std::max_element(s.begin(), s.end()) - s.begin();
        CHECK(ax == as);
    }
}

TEST_CASE("topk_indices examples and ties") {
    CHECK(topk_indices({0.1f, 0.9f, 0.5f}, 2) == std::vector<size_t>{1, 2});
    CHECK(topk_indices({0.5f, 0.5f, 0.5f}, 2) == std::vector<size_t>{0, 1});
    CHECK_THROWS_AS((void)topk_indices({1.0f}, 2), Error);
}

TEST_CASE("topk_indices equals stable full-sort oracle: 1000 trials") {
    std::mt19937 rng(9);
    for (int trial = 0; trial < 1000; ++trial) {
        size_t n = 1 + rng() % 64;
        size_t k = rng() % (n + 1);
        std::vector<float> x(n);
        for (float & v : x) {
            // coarse values force frequent ties
            v = float(rng() % 8);
        }
        std::vector<size_t> idx(n);
        std::iota(idx.begin(), idx.end(), size_t(0));
        std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] > x[b]; });
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
        CHECK(topk_indices(x, k) == idx);
    }
}

TEST_CASE("topk on seeded length-64 vector, k=7") {
    Matrix m = random_matrix(1, 64, 4242);
    std::vector<float> x = m.data;
    std::vector<size_t> idx(64);
    std::iota(idx.begin(), idx.end(), size_t(0));
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] > x[b]; });
    idx.resize(7);
    std::sort(idx.begin(), idx.end());
    CHECK(topk_indices(x, 7) == idx);
}

TEST_CASE("svd identity and rank-1") {
    Matrix id(4, 4);
    for (size_t i = 0; i < 4; ++i) {
        id.at(i, i) = 1.0f;
    }
    SvdFactors f = svd_truncated(id, 4);
    for (float s : f.s) {
        CHECK(s == doctest::Approx(1.0f));
    }
    CHECK(frob_diff(reconstruct(f), id) < 1e-5);

    // rank-1 outer product
    std::vector<float> u = {1, 2, 3};
    std::vector<float> v = {4, 0, -1, 2};
    Matrix w(3, 4);
    for (size_t i = 0; i < 3; ++i) {
        for (size_t j = 0; j < 4; ++j) {
            w.at(i, j) = u[i] * v[j];
        }
    }
    SvdFactors f1 = svd_truncated(w, 1);
    double nu = std::sqrt(1.0 + 4.0 + 9.0);
    double nv = std::sqrt(16.0 + 0.0 + 1.0 + 4.0);
    CHECK(double(f1.s[0]) == doctest::Approx(nu * nv).epsilon(1e-5));
    CHECK(frob_diff(reconstruct(f1), w) < 1e-4 * nu * nv);

    CHECK_THROWS_AS((void)svd_truncated(w, 0), Error);
    CHECK_THROWS_AS((void)svd_truncated(w, 5), Error);
    Matrix nan(2, 2);
    nan.data[0] = std::nanf("");
    CHECK_THROWS_AS((void)svd_truncated(nan, 1), Error);
}

TEST_CASE("svd full-rank reconstruction within 1e-4 relative") {
    for (uint32_t seed : {1u, 2u, 3u}) {
        Matrix w = random_matrix(7, 5, seed);
        SvdFactors f = svd_truncated(w, 5);
        double wn = 0.0;
        for (float x : w.data) {
            wn += double(x) * double(x);
        }
        CHECK(frob_diff(reconstruct(f), w) < 1e-4 * std::sqrt(wn));
    }
}

TEST_CASE("svd deterministic across runs") {
    Matrix w = random_matrix(8, 6, 77);
    SvdFactors a = svd_truncated(w, 3);
    SvdFactors b = svd_truncated(w, 3);
    CHECK(a.u.data == b.u.data);
    CHECK(a.v.data == b.v.data);
    CHECK(a.s == b.s);
    // sign convention: dominant entry of each U column non-negative
    for (size_t k = 0; k < 3; ++k) {
        size_t arg = 0;
        for (size_t i = 0; i < a.u.rows; ++i) {
            if (std::abs(a.u.at(i, k)) > std::abs(a.u.at(arg, k))) {
                arg = i;
            }
        }
        CHECK(a.u.at(arg, k) >= 0.0f);
    }
}

#ifdef SPTS_HAVE_EIGEN
TEST_CASE("svd truncation error equals discarded singular values (Eigen oracle)") {
    Matrix w = random_matrix(8, 6, 99);
    Eigen::MatrixXd ew(8, 6);
    for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 6; ++j) {
            ew(i, j) = w.at(i, j);
        }
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(ew);
    Eigen::VectorXd sig = svd.singularValues();

    SvdFactors f = svd_truncated(w, 3);
    for (int k = 0; k < 3; ++k) {
        CHECK(double(f.s[k]) == doctest::Approx(sig(k)).epsilon(1e-5));
    }
    double expected = std::sqrt(sig(3) * sig(3) + sig(4) * sig(4) + sig(5) * sig(5));
    double got = frob_diff(reconstruct(f), w);
    CHECK(got == doctest::Approx(expected).epsilon(1e-4));
}
#endif

TEST_CASE("silu, rmsnorm, cosine basics") {
    CHECK(silu({0.0f})[0] == 0.0f);
    CHECK(silu({1.0f})[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));

    std::vector<float> g(4, 1.0f);
    auto n = rmsnorm({2, 2, 2, 2}, g, 0.0f);
    for (float v : n) {
        CHECK(v == doctest::Approx(1.0f));
    }

    std::vector<float> v = {1, -2, 3};
    CHECK(cosine_sim(v, v) == doctest::Approx(1.0));
    CHECK(cosine_sim({0, 0}, {1, 2}) == 0.0);
    CHECK_THROWS_AS((void)rmsnorm({1.0f}, g, 0.0f), Error);
}
