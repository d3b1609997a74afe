#include "spts/ffn_proxy.hpp"

#include <algorithm>
#include <cmath>

namespace spts {

CalibrationSet collect_calibration(const Model & model,
                                   const std::vector<std::vector<uint32_t>> & token_sequences,
                                   size_t first_layer, size_t last_layer) {
    if (token_sequences.empty()) {
        fail(ErrorKind::Input, "collect_calibration: no sequences");
    }
    if (first_layer < 1 || last_layer > model.config.num_layers || first_layer > last_layer) {
        fail(ErrorKind::Input, "collect_calibration: bad layer range");
    }
    CalibrationSet set;
    set.per_layer.resize(model.config.num_layers);
    for (const auto & seq : token_sequences) {
        if (seq.empty()) {
            fail(ErrorKind::Input, "collect_calibration: empty sequence");
        }
        Matrix x = embed_tokens(model, seq);
        std::vector<size_t> positions(seq.size());
        for (size_t i = 0; i < seq.size(); ++i) {
            positions[i] = i;
        }
        KvCache cache(model.config.num_layers);
        for (size_t l = 0; l < model.config.num_layers; ++l) {
            Matrix y = mha_sublayer(model, l, x, cache, positions);
            if (l + 1 >= first_layer && l + 1 <= last_layer) {
                Matrix yn = rmsnorm_rows(y, model.layers[l].ffn_norm_gain, model.config.norm_eps);
                for (size_t i = 0; i < yn.rows; ++i) {
                    set.per_layer[l].emplace_back(yn.row(i), yn.row(i) + yn.cols);
                }
            }
            x = ffn_sublayer(model, l, y);
        }
    }
    return set;
}

std::vector<float> channel_importance(const std::vector<std::vector<float>> & calib,
                                      const Matrix & w_gate, const Matrix & w_up, float rho) {
    if (calib.empty()) {
        fail(ErrorKind::Input, "channel_importance: empty calibration set");
    }
    if (rho <= 0.0f || rho > 1.0f) {
        fail(ErrorKind::Input, "channel_importance: rho must be in (0, 1]");
    }
    const size_t d_ff = w_gate.cols;
    const size_t g = calib.size();

    Matrix xs(g, calib[0].size());
    for (size_t i = 0; i < g; ++i) {
        std::copy(calib[i].begin(), calib[i].end(), xs.row(i));
    }
    Matrix gate = matmul(xs, w_gate);
    silu_inplace(gate);
    Matrix up = matmul(xs, w_up);

    // tolerate f32 representation error in rho (0.2f * 10 is slightly above 2)
    double frac = double(rho) * double(g);
    size_t top = size_t(std::ceil(frac - 1e-6 * std::max(1.0, frac)));
    top = std::max<size_t>(1, std::min(top, g));

    std::vector<float> importance(d_ff);
    std::vector<float> column(g);
    for (size_t j = 0; j < d_ff; ++j) {
        for (size_t i = 0; i < g; ++i) {
            column[i] = std::abs(gate.at(i, j) * up.at(i, j));
        }
        std::partial_sort(column.begin(), column.begin() + (ptrdiff_t)top, column.end(),
                          std::greater<float>());
        double mean = 0.0;
        for (size_t i = 0; i < top; ++i) {
            mean += column[i];
        }
        importance[j] = float(mean / double(top));
    }
    return importance;
}

ProxyLayer build_proxy(const LayerWeights & w, const std::vector<float> & importance,
                       size_t d_low, size_t rank) {
    const size_t d = w.w_gate.rows;
    const size_t d_ff = w.w_gate.cols;
    if (d_low < 1 || d_low > d_ff || importance.size() != d_ff) {
        fail(ErrorKind::Budget, "build_proxy: bad d_low");
    }
    if (rank < 1 || rank > std::min(d, d_low)) {
        fail(ErrorKind::Budget, "build_proxy: bad rank");
    }
    ProxyLayer p;
    p.channels = topk_indices(importance, d_low);
    p.rank = rank;
    p.d_low = d_low;
    p.present = true;

    auto factorize = [&](const Matrix & full, Matrix & u, Matrix & v) {
        Matrix reduced(d, d_low);
        for (size_t i = 0; i < d; ++i) {
            for (size_t j = 0; j < d_low; ++j) {
                reduced.at(i, j) = full.at(i, p.channels[j]);
            }
        }
        SvdFactors f = svd_truncated(reduced, rank);
        // fold singular values into V; U keeps orthonormal columns
        for (size_t k = 0; k < rank; ++k) {
            for (size_t j = 0; j < d_low; ++j) {
                f.v.at(k, j) *= f.s[k];
            }
        }
        u = std::move(f.u);
        v = std::move(f.v);
    };
    factorize(w.w_gate, p.u_gate, p.v_gate);
    factorize(w.w_up, p.u_up, p.v_up);
    factorize(w.w_down, p.u_down, p.v_down);
    return p;
}

Matrix proxy_forward(const Matrix & x, const ProxyLayer & p) {
    if (x.cols != p.u_gate.rows) {
        fail(ErrorKind::Shape, "proxy_forward: input width != D");
    }
    Matrix gate = matmul(matmul(x, p.u_gate), p.v_gate);
    silu_inplace(gate);
    Matrix up = matmul(matmul(x, p.u_up), p.v_up);
    for (size_t i = 0; i < gate.data.size(); ++i) {
        gate.data[i] *= up.data[i];
    }
    return matmul(matmul_transposed(gate, p.v_down), transpose(p.u_down));
}

ScoreVector ffn_scores(const Matrix & x_normed, const ProxyLayer & p, const ScoreVector & s_mha) {
    if (x_normed.rows != s_mha.values.size()) {
        fail(ErrorKind::Ordering, "ffn_scores: score vector misaligned with rows");
    }
    Matrix f = proxy_forward(x_normed, p);
    ScoreVector out;
    out.positions = s_mha.positions;
    out.values.resize(f.rows);
    for (size_t i = 0; i < f.rows; ++i) {
        double norm = 0.0;
        for (size_t t = 0; t < f.cols; ++t) {
            norm += double(f.at(i, t)) * double(f.at(i, t));
        }
        out.values[i] = float(std::sqrt(norm) * double(s_mha.values[i]));
    }
    return out;
}

void reduced_ffn(Matrix & x, const std::vector<size_t> & active, const LayerWeights & w,
                 float norm_eps) {
    if (active.empty()) {
        fail(ErrorKind::Budget, "reduced_ffn: empty active set");
    }
    Matrix xa(active.size(), x.cols);
    for (size_t i = 0; i < active.size(); ++i) {
        std::copy(x.row(active[i]), x.row(active[i]) + x.cols, xa.row(i));
    }
    Matrix xn = rmsnorm_rows(xa, w.ffn_norm_gain, norm_eps);
    Matrix f = ffn_forward(w, xn);
    for (size_t i = 0; i < active.size(); ++i) {
        float * dst = x.row(active[i]);
        for (size_t t = 0; t < x.cols; ++t) {
            dst[t] += f.at(i, t);
        }
    }
}

void save_proxy(const ProxyWeights & proxy, const std::string & path) {
    TensorFile tf;
    Matrix meta(1, 1);
    meta.data[0] = float(proxy.layers.size());
    tf.add("num_layers", std::move(meta));
    for (size_t l = 0; l < proxy.layers.size(); ++l) {
        const ProxyLayer & p = proxy.layers[l];
        if (!p.present) {
            continue;
        }
        const std::string prefix = "layer" + std::to_string(l + 1) + ".proxy.";
        Matrix ch(1, p.channels.size());
        for (size_t j = 0; j < p.channels.size(); ++j) {
            ch.data[j] = float(p.channels[j]);
        }
        tf.add(prefix + "channels", std::move(ch));
        tf.add(prefix + "gate.U", p.u_gate);
        tf.add(prefix + "gate.V", p.v_gate);
        tf.add(prefix + "up.U", p.u_up);
        tf.add(prefix + "up.V", p.v_up);
        tf.add(prefix + "down.U", p.u_down);
        tf.add(prefix + "down.V", p.v_down);
    }
    save_tensor_file(tf, path);
}

ProxyWeights load_proxy(const std::string & path) {
    TensorFile tf = load_tensor_file(path);
    ProxyWeights proxy;
    proxy.layers.resize(size_t(tf.get("num_layers").data[0]));
    for (size_t l = 0; l < proxy.layers.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l + 1) + ".proxy.";
        if (!tf.has(prefix + "channels")) {
            continue;
        }
        ProxyLayer & p = proxy.layers[l];
        const Matrix & ch = tf.get(prefix + "channels");
        p.channels.resize(ch.data.size());
        for (size_t j = 0; j < ch.data.size(); ++j) {
            p.channels[j] = size_t(ch.data[j]);
        }
        p.u_gate = tf.get(prefix + "gate.U");
        p.v_gate = tf.get(prefix + "gate.V");
        p.u_up = tf.get(prefix + "up.U");
        p.v_up = tf.get(prefix + "up.V");
        p.u_down = tf.get(prefix + "down.U");
        p.v_down = tf.get(prefix + "down.V");
        p.rank = p.u_gate.cols;
        p.d_low = p.channels.size();
        p.present = true;
    }
    return proxy;
}

} // namespace spts
