#include "spts/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace spts {

PapResult pap_scores(const Matrix & x_normed, const LayerWeights & w, const ModelConfig & config,
                     const std::vector<size_t> & positions, size_t probe_query_len) {
    const size_t n = x_normed.rows;
    if (n < 1 || n != positions.size()) {
        fail(ErrorKind::Shape, "pap_scores: bad input rows");
    }
    if (probe_query_len < 1 || probe_query_len > n) {
        fail(ErrorKind::Budget, "pap_scores: probe query length exceeds candidates");
    }
    const size_t h = config.num_heads;
    const size_t d = config.head_dim;
    const size_t group = h / config.num_kv_heads;
    const float inv_sqrt_d = float(1.0 / std::sqrt(double(d)));

    Matrix k = matmul(x_normed, w.w_k);
    apply_rope(k, config.num_kv_heads, d, positions, config.rope_theta);

    // query projections for the trailing probe rows only
    const size_t q0 = n - probe_query_len;
    Matrix probe_rows(probe_query_len, x_normed.cols);
    std::vector<size_t> probe_pos(probe_query_len);
    for (size_t i = 0; i < probe_query_len; ++i) {
        std::copy(x_normed.row(q0 + i), x_normed.row(q0 + i) + x_normed.cols, probe_rows.row(i));
        probe_pos[i] = positions[q0 + i];
    }
    Matrix q = matmul(probe_rows, w.w_q);
    apply_rope(q, h, d, probe_pos, config.rope_theta);

    std::vector<double> acc(n, 0.0);
    for (size_t pi = 0; pi < probe_query_len; ++pi) {
        const size_t limit = q0 + pi;  // causal: keys at row index <= probe row
        for (size_t head = 0; head < h; ++head) {
            const float * qh = q.row(pi) + head * d;
            const size_t kvh = head / group;
            std::vector<float> logits(limit + 1);
            for (size_t j = 0; j <= limit; ++j) {
                const float * kh = k.row(j) + kvh * d;
                double dot = 0.0;
                for (size_t t = 0; t < d; ++t) {
                    dot += double(qh[t]) * double(kh[t]);
                }
                logits[j] = float(dot);
            }
            std::vector<float> sm = softmax_row(logits, inv_sqrt_d);
            for (size_t j = 0; j <= limit; ++j) {
                acc[j] += sm[j];
            }
        }
    }
    flop_counter().add(uint64_t(2) * probe_query_len * h * n * d);

    PapResult out;
    out.scores.positions = positions;
    out.scores.values.resize(n);
    const double norm = 1.0 / double(h * probe_query_len);
    for (size_t j = 0; j < n; ++j) {
        out.scores.values[j] = float(acc[j] * norm);
    }
    out.keys = std::move(k);
    return out;
}

std::vector<size_t> select_active(const ScoreVector & scores, size_t budget,
                                  const std::vector<size_t> & forced) {
    const size_t n = scores.values.size();
    std::vector<bool> is_forced(n, false);
    for (size_t f : forced) {
        if (f >= n) {
            fail(ErrorKind::Shape, "select_active: forced index out of range");
        }
        is_forced[f] = true;
    }
    size_t n_forced = 0;
    for (bool b : is_forced) {
        n_forced += b;
    }
    const size_t m = std::min(n, std::max(budget, n_forced));

    std::vector<size_t> rest;
    rest.reserve(n - n_forced);
    for (size_t i = 0; i < n; ++i) {
        if (!is_forced[i]) {
            rest.push_back(i);
        }
    }
    std::stable_sort(rest.begin(), rest.end(), [&](size_t a, size_t b) {
        return scores.values[a] > scores.values[b];
    });

    std::vector<size_t> out;
    out.reserve(m);
    for (size_t i = 0; i < n; ++i) {
        if (is_forced[i]) {
            out.push_back(i);
        }
    }
    for (size_t i = 0; i < m - n_forced; ++i) {
        out.push_back(rest[i]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

void reduced_mha(Matrix & x, const Matrix & x_normed, const std::vector<size_t> & active,
                 const Matrix & precomputed_keys, const LayerWeights & w,
                 const ModelConfig & config, const std::vector<size_t> & positions,
                 KvCache & cache, size_t layer) {
    if (active.empty()) {
        fail(ErrorKind::Budget, "reduced_mha: empty active set");
    }
    const size_t m = active.size();
    Matrix xa(m, x_normed.cols);
    Matrix ka(m, precomputed_keys.cols);
    std::vector<size_t> apos(m);
    for (size_t i = 0; i < m; ++i) {
        const size_t r = active[i];
        std::copy(x_normed.row(r), x_normed.row(r) + x_normed.cols, xa.row(i));
        std::copy(precomputed_keys.row(r), precomputed_keys.row(r) + precomputed_keys.cols,
                  ka.row(i));
        apos[i] = positions[r];
    }
    Matrix qa = matmul(xa, w.w_q);
    Matrix va = matmul(xa, w.w_v);
    apply_rope(qa, config.num_heads, config.head_dim, apos, config.rope_theta);

    Matrix attn = attention_over(qa, apos, ka, va, apos,
                                 config.num_heads, config.num_kv_heads, config.head_dim);
    Matrix proj = matmul(attn, w.w_o);
    for (size_t i = 0; i < m; ++i) {
        float * dst = x.row(active[i]);
        for (size_t t = 0; t < x.cols; ++t) {
            dst[t] += proj.at(i, t);
        }
    }
    cache_append(cache, layer, ka, va, apos);
}

MhaObjectiveResult mha_objective_bruteforce(const Model & model, size_t layer, const Matrix & x,
                                            const std::vector<size_t> & positions, size_t m) {
    const size_t n = x.rows;
    if (n > 12) {
        fail(ErrorKind::Budget, "mha_objective_bruteforce: n too large");
    }
    if (m < 1 || m > n) {
        fail(ErrorKind::Budget, "mha_objective_bruteforce: bad subset size");
    }
    const LayerWeights & w = model.layers[layer];

    KvCache full_cache(model.config.num_layers);
    Matrix y_full = mha_sublayer(model, layer, x, full_cache, positions);
    const float * ref = y_full.row(n - 1);

    Matrix xn = rmsnorm_rows(x, w.attn_norm_gain, model.config.norm_eps);
    Matrix keys = matmul(xn, w.w_k);
    apply_rope(keys, model.config.num_kv_heads, model.config.head_dim, positions,
               model.config.rope_theta);

    MhaObjectiveResult res;
    res.best_loss = std::numeric_limits<double>::infinity();

    std::vector<size_t> subset(m);
    for (size_t i = 0; i < m; ++i) {
        subset[i] = i;
    }
    while (true) {
        Matrix y = x;
        KvCache scratch(model.config.num_layers);
        reduced_mha(y, xn, subset, keys, w, model.config, positions, scratch, layer);
        double loss = 0.0;
        for (size_t t = 0; t < x.cols; ++t) {
            double diff = double(y.at(n - 1, t)) - double(ref[t]);
            loss += diff * diff;
        }
        loss = std::sqrt(loss);
        if (loss < res.best_loss) {
            res.best_loss = loss;
            res.best_subset = subset;
        }
        // next combination
        size_t i = m;
        while (i > 0 && subset[i - 1] == n - m + i - 1) {
            --i;
        }
        if (i == 0) {
            break;
        }
        ++subset[i - 1];
        for (size_t j = i; j < m; ++j) {
            subset[j] = subset[j - 1] + 1;
        }
    }
    return res;
}

} // namespace spts
