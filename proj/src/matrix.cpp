#include "spts/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spts {

FlopCounter & flop_counter() {
    thread_local FlopCounter counter;
    return counter;
}

void check_finite(const Matrix & m, const char * what) {
    for (float v : m.data) {
        if (!std::isfinite(v)) {
            fail(ErrorKind::Numeric, std::string("non-finite value in ") + what);
        }
    }
}

Matrix matmul(const Matrix & a, const Matrix & b) {
    if (a.cols != b.rows) {
        fail(ErrorKind::Shape, "matmul: inner dimensions disagree");
    }
    Matrix out(a.rows, b.cols);
    for (size_t i = 0; i < a.rows; ++i) {
        const float * ai = a.row(i);
        for (size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (size_t k = 0; k < a.cols; ++k) {
                acc += double(ai[k]) * double(b.at(k, j));
            }
            out.at(i, j) = float(acc);
        }
    }
    flop_counter().add(uint64_t(2) * a.rows * a.cols * b.cols);
    return out;
}

Matrix matmul_transposed(const Matrix & a, const Matrix & b) {
    if (a.cols != b.cols) {
        fail(ErrorKind::Shape, "matmul_transposed: inner dimensions disagree");
    }
    Matrix out(a.rows, b.rows);
    for (size_t i = 0; i < a.rows; ++i) {
        const float * ai = a.row(i);
        for (size_t j = 0; j < b.rows; ++j) {
            const float * bj = b.row(j);
            double acc = 0.0;
            for (size_t k = 0; k < a.cols; ++k) {
                acc += double(ai[k]) * double(bj[k]);
            }
            out.at(i, j) = float(acc);
        }
    }
    flop_counter().add(uint64_t(2) * a.rows * a.cols * b.rows);
    return out;
}

Matrix transpose(const Matrix & m) {
    Matrix out(m.cols, m.rows);
    for (size_t i = 0; i < m.rows; ++i) {
        for (size_t j = 0; j < m.cols; ++j) {
            out.at(j, i) = m.at(i, j);
        }
    }
    return out;
}

std::vector<float> softmax_row(const std::vector<float> & x, float scale) {
    if (x.empty()) {
        fail(ErrorKind::Shape, "softmax_row: empty input");
    }
    double mx = -HUGE_VAL;
    for (float v : x) {
        mx = std::max(mx, double(v) * scale);
    }
    std::vector<double> e(x.size());
    double sum = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        e[i] = std::exp(double(x[i]) * scale - mx);
        sum += e[i];
    }
    std::vector<float> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = float(e[i] / sum);
    }
    return out;
}

std::vector<size_t> topk_indices(const std::vector<float> & scores, size_t k) {
    if (k > scores.size()) {
        fail(ErrorKind::Budget, "topk_indices: k exceeds vector length");
    }
    std::vector<size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), size_t(0));
    // stable sort by descending score keeps the lower index first on ties
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        return scores[a] > scores[b];
    });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<float> silu(const std::vector<float> & x) {
    std::vector<float> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double v = x[i];
        out[i] = float(v / (1.0 + std::exp(-v)));
    }
    return out;
}

void silu_inplace(Matrix & m) {
    for (float & f : m.data) {
        double v = f;
        f = float(v / (1.0 + std::exp(-v)));
    }
}

std::vector<float> rmsnorm(const std::vector<float> & x, const std::vector<float> & gain, float eps) {
    if (x.size() != gain.size()) {
        fail(ErrorKind::Shape, "rmsnorm: gain length mismatch");
    }
    double ms = 0.0;
    for (float v : x) {
        ms += double(v) * double(v);
    }
    ms = ms / double(x.size()) + double(eps);
    double inv = 1.0 / std::sqrt(ms);
    std::vector<float> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = float(double(x[i]) * inv * double(gain[i]));
    }
    return out;
}

double cosine_sim(const std::vector<float> & a, const std::vector<float> & b) {
    if (a.size() != b.size()) {
        fail(ErrorKind::Shape, "cosine_sim: length mismatch");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * double(b[i]);
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

// One-sided Jacobi SVD on an m x n (m >= n) column-major working copy in f64.
// Columns of a are rotated until pairwise orthogonal; v accumulates the
// rotations so that input = u * diag(s) * v^T with u = a / ||a_j||.
struct JacobiResult {
    std::vector<double> a;    // m x n column-major, orthogonal columns on exit
    std::vector<double> v;    // n x n column-major
    size_t m, n;
};

JacobiResult jacobi_orthogonalize(const Matrix & w) {
    const size_t m = w.rows, n = w.cols;
    JacobiResult r;
    r.m = m;
    r.n = n;
    r.a.resize(m * n);
    r.v.assign(n * n, 0.0);
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            r.a[j * m + i] = w.at(i, j);
        }
    }
    for (size_t j = 0; j < n; ++j) {
        r.v[j * n + j] = 1.0;
    }

    const double tol = 1e-14;
    const int max_sweeps = 60;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (size_t p = 0; p + 1 < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                double * ap = r.a.data() + p * m;
                double * aq = r.a.data() + q * m;
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (size_t i = 0; i < m; ++i) {
                    alpha += ap[i] * ap[i];
                    beta += aq[i] * aq[i];
                    gamma += ap[i] * aq[i];
                }
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) {
                    continue;
                }
                rotated = true;
                double zeta = (beta - alpha) / (2.0 * gamma);
                double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = c * t;
                for (size_t i = 0; i < m; ++i) {
                    double tp = ap[i];
                    ap[i] = c * tp - s * aq[i];
                    aq[i] = s * tp + c * aq[i];
                }
                double * vp = r.v.data() + p * n;
                double * vq = r.v.data() + q * n;
                for (size_t i = 0; i < n; ++i) {
                    double tp = vp[i];
                    vp[i] = c * tp - s * vq[i];
                    vq[i] = s * tp + c * vq[i];
                }
            }
        }
        if (!rotated) {
            break;
        }
    }
    return r;
}

} // namespace

SvdFactors svd_truncated(const Matrix & w, size_t r) {
    if (r == 0) {
        fail(ErrorKind::Budget, "svd_truncated: rank must be positive");
    }
    if (r > std::min(w.rows, w.cols)) {
        fail(ErrorKind::Budget, "svd_truncated: rank exceeds min(rows, cols)");
    }
    check_finite(w, "svd_truncated input");

    // Work on w or w^T so that rows >= cols, then swap factors back.
    const bool flipped = w.rows < w.cols;
    Matrix work = flipped ? transpose(w) : w;
    JacobiResult jr = jacobi_orthogonalize(work);
    const size_t m = jr.m, n = jr.n;

    std::vector<double> sigma(n);
    for (size_t j = 0; j < n; ++j) {
        double ss = 0.0;
        for (size_t i = 0; i < m; ++i) {
            ss += jr.a[j * m + i] * jr.a[j * m + i];
        }
        sigma[j] = std::sqrt(ss);
    }
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return sigma[a] > sigma[b];
    });

    // left: m x r orthonormal, right: n x r orthonormal, w.r.t. the working copy
    Matrix left(m, r), right(n, r);
    std::vector<float> s(r);
    for (size_t k = 0; k < r; ++k) {
        size_t j = order[k];
        s[k] = float(sigma[j]);
        double inv = sigma[j] > 0.0 ? 1.0 / sigma[j] : 0.0;
        for (size_t i = 0; i < m; ++i) {
            left.at(i, k) = float(jr.a[j * m + i] * inv);
        }
        for (size_t i = 0; i < n; ++i) {
            right.at(i, k) = float(jr.v[j * n + i]);
        }
    }

    SvdFactors out;
    if (flipped) {
        out.u = right;   // w.rows x r
        out.v = transpose(left);
    } else {
        out.u = left;
        out.v = transpose(right);
    }
    out.s = std::move(s);

    // Sign convention: dominant entry of each U column non-negative.
    for (size_t k = 0; k < out.s.size(); ++k) {
        size_t arg = 0;
        float best = 0.0f;
        for (size_t i = 0; i < out.u.rows; ++i) {
            float mag = std::abs(out.u.at(i, k));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        if (out.u.at(arg, k) < 0.0f) {
            for (size_t i = 0; i < out.u.rows; ++i) {
                out.u.at(i, k) = -out.u.at(i, k);
            }
            for (size_t j = 0; j < out.v.cols; ++j) {
                out.v.at(k, j) = -out.v.at(k, j);
            }
        }
    }
    return out;
}

} // namespace spts
