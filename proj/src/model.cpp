#include "spts/model.hpp"

#include <cmath>
#include <random>

namespace spts {

namespace {

void fill_seeded(Matrix & m, std::mt19937 & rng, double scale) {
    // Raw mt19937 draws mapped to [-1, 1); normal_distribution is not
    // bit-reproducible across standard libraries.
    for (float & f : m.data) {
        double u = double(rng()) / 4294967296.0;
        f = float((2.0 * u - 1.0) * scale);
    }
}

std::string layer_prefix(size_t layer) {
    return "layer" + std::to_string(layer + 1) + ".";
}

} // namespace

Model gen_toy_model(const ModelConfig & config, uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    const size_t d = config.hidden_dim;
    const double scale = 1.0 / std::sqrt(double(d));
    std::mt19937 rng{uint32_t(seed)};

    m.embedding = Matrix(config.vocab_size, d);
    fill_seeded(m.embedding, rng, scale);

    m.layers.resize(config.num_layers);
    for (auto & lw : m.layers) {
        lw.w_q = Matrix(d, config.num_heads * config.head_dim);
        lw.w_k = Matrix(d, config.kv_dim());
        lw.w_v = Matrix(d, config.kv_dim());
        lw.w_o = Matrix(config.num_heads * config.head_dim, d);
        lw.w_gate = Matrix(d, config.ffn_dim);
        lw.w_up = Matrix(d, config.ffn_dim);
        lw.w_down = Matrix(d, config.ffn_dim);
        fill_seeded(lw.w_q, rng, scale);
        fill_seeded(lw.w_k, rng, scale);
        fill_seeded(lw.w_v, rng, scale);
        fill_seeded(lw.w_o, rng, scale);
        fill_seeded(lw.w_gate, rng, scale);
        fill_seeded(lw.w_up, rng, scale);
        fill_seeded(lw.w_down, rng, scale);
        lw.attn_norm_gain.assign(d, 1.0f);
        lw.ffn_norm_gain.assign(d, 1.0f);
    }

    m.head = Matrix(d, config.vocab_size);
    fill_seeded(m.head, rng, scale);
    m.final_norm_gain.assign(d, 1.0f);
    return m;
}

void save_model(const Model & model, const std::string & path) {
    TensorFile tf;
    Matrix cfg(1, 10);
    cfg.data = {
        float(model.config.num_layers), float(model.config.hidden_dim),
        float(model.config.num_heads), float(model.config.num_kv_heads),
        float(model.config.head_dim), float(model.config.ffn_dim),
        float(model.config.vocab_size), model.config.rope_theta,
        model.config.norm_eps, float(model.config.dtype_bytes),
    };
    tf.add("config", std::move(cfg));
    tf.add("embedding", model.embedding);
    for (size_t l = 0; l < model.layers.size(); ++l) {
        const LayerWeights & lw = model.layers[l];
        const std::string p = layer_prefix(l);
        tf.add(p + "W_Q", lw.w_q);
        tf.add(p + "W_K", lw.w_k);
        tf.add(p + "W_V", lw.w_v);
        tf.add(p + "W_O", lw.w_o);
        tf.add(p + "W_gate", lw.w_gate);
        tf.add(p + "W_up", lw.w_up);
        tf.add(p + "W_down", lw.w_down);
        Matrix ag(1, lw.attn_norm_gain.size());
        ag.data = lw.attn_norm_gain;
        tf.add(p + "attn_norm_gain", std::move(ag));
        Matrix fg(1, lw.ffn_norm_gain.size());
        fg.data = lw.ffn_norm_gain;
        tf.add(p + "ffn_norm_gain", std::move(fg));
    }
    tf.add("head", model.head);
    Matrix fng(1, model.final_norm_gain.size());
    fng.data = model.final_norm_gain;
    tf.add("final_norm_gain", std::move(fng));
    save_tensor_file(tf, path);
}

Model load_model(const std::string & path) {
    TensorFile tf = load_tensor_file(path);
    const Matrix & cfg = tf.get("config");
    if (cfg.data.size() != 10) {
        fail(ErrorKind::Format, "model file: bad config tensor");
    }
    Model m;
    m.config.num_layers = size_t(cfg.data[0]);
    m.config.hidden_dim = size_t(cfg.data[1]);
    m.config.num_heads = size_t(cfg.data[2]);
    m.config.num_kv_heads = size_t(cfg.data[3]);
    m.config.head_dim = size_t(cfg.data[4]);
    m.config.ffn_dim = size_t(cfg.data[5]);
    m.config.vocab_size = size_t(cfg.data[6]);
    m.config.rope_theta = cfg.data[7];
    m.config.norm_eps = cfg.data[8];
    m.config.dtype_bytes = size_t(cfg.data[9]);
    m.config.validate();

    m.embedding = tf.get("embedding");
    m.head = tf.get("head");
    m.final_norm_gain = tf.get("final_norm_gain").data;
    m.layers.resize(m.config.num_layers);
    for (size_t l = 0; l < m.config.num_layers; ++l) {
        LayerWeights & lw = m.layers[l];
        const std::string p = layer_prefix(l);
        lw.w_q = tf.get(p + "W_Q");
        lw.w_k = tf.get(p + "W_K");
        lw.w_v = tf.get(p + "W_V");
        lw.w_o = tf.get(p + "W_O");
        lw.w_gate = tf.get(p + "W_gate");
        lw.w_up = tf.get(p + "W_up");
        lw.w_down = tf.get(p + "W_down");
        lw.attn_norm_gain = tf.get(p + "attn_norm_gain").data;
        lw.ffn_norm_gain = tf.get(p + "ffn_norm_gain").data;
        if (lw.w_q.rows != m.config.hidden_dim ||
            lw.w_q.cols != m.config.num_heads * m.config.head_dim ||
            lw.w_k.cols != m.config.kv_dim() || lw.w_gate.cols != m.config.ffn_dim) {
            fail(ErrorKind::Format, "model file: layer shape inconsistent with config");
        }
    }
    return m;
}

Matrix rmsnorm_rows(const Matrix & x, const std::vector<float> & gain, float eps) {
    Matrix out(x.rows, x.cols);
    for (size_t i = 0; i < x.rows; ++i) {
        std::vector<float> row(x.row(i), x.row(i) + x.cols);
        std::vector<float> n = rmsnorm(row, gain, eps);
        std::copy(n.begin(), n.end(), out.row(i));
    }
    return out;
}

void apply_rope(Matrix & x, size_t num_heads, size_t head_dim,
                const std::vector<size_t> & positions, float theta) {
    const size_t half = head_dim / 2;
    for (size_t i = 0; i < x.rows; ++i) {
        const double pos = double(positions[i]);
        float * row = x.row(i);
        for (size_t h = 0; h < num_heads; ++h) {
            float * hd = row + h * head_dim;
            for (size_t j = 0; j < half; ++j) {
                double freq = std::pow(double(theta), -2.0 * double(j) / double(head_dim));
                double angle = pos * freq;
                double c = std::cos(angle), s = std::sin(angle);
                double a = hd[j], b = hd[j + half];
                hd[j] = float(a * c - b * s);
                hd[j + half] = float(a * s + b * c);
            }
        }
    }
}

Matrix attention_over(const Matrix & q, const std::vector<size_t> & qpos,
                      const Matrix & k, const Matrix & v, const std::vector<size_t> & kpos,
                      size_t num_heads, size_t num_kv_heads, size_t head_dim) {
    const size_t group = num_heads / num_kv_heads;
    const float inv_sqrt_d = float(1.0 / std::sqrt(double(head_dim)));
    Matrix out(q.rows, num_heads * head_dim);
    for (size_t i = 0; i < q.rows; ++i) {
        for (size_t h = 0; h < num_heads; ++h) {
            const size_t kvh = h / group;
            const float * qh = q.row(i) + h * head_dim;
            // causal window: keys at original position <= query position
            std::vector<float> logits;
            std::vector<size_t> visible;
            for (size_t j = 0; j < k.rows; ++j) {
                if (kpos[j] > qpos[i]) {
                    continue;
                }
                const float * kh = k.row(j) + kvh * head_dim;
                double dot = 0.0;
                for (size_t t = 0; t < head_dim; ++t) {
                    dot += double(qh[t]) * double(kh[t]);
                }
                logits.push_back(float(dot));
                visible.push_back(j);
            }
            if (logits.empty()) {
                fail(ErrorKind::Ordering, "attention_over: query sees no keys");
            }
            std::vector<float> w = softmax_row(logits, inv_sqrt_d);
            float * oh = out.row(i) + h * head_dim;
            for (size_t t = 0; t < head_dim; ++t) {
                double acc = 0.0;
                for (size_t j = 0; j < visible.size(); ++j) {
                    acc += double(w[j]) * double(v.at(visible[j], kvh * head_dim + t));
                }
                oh[t] = float(acc);
            }
        }
    }
    flop_counter().add(uint64_t(4) * q.rows * k.rows * num_heads * head_dim);
    return out;
}

Matrix ffn_forward(const LayerWeights & w, const Matrix & x_normed) {
    Matrix gate = matmul(x_normed, w.w_gate);
    silu_inplace(gate);
    Matrix up = matmul(x_normed, w.w_up);
    for (size_t i = 0; i < gate.data.size(); ++i) {
        gate.data[i] *= up.data[i];
    }
    return matmul_transposed(gate, w.w_down);
}

Matrix mha_sublayer(const Model & model, size_t layer, const Matrix & x,
                    KvCache & cache, const std::vector<size_t> & positions) {
    if (x.rows != positions.size()) {
        fail(ErrorKind::Shape, "full_block_forward: rows != positions");
    }
    for (size_t i = 1; i < positions.size(); ++i) {
        if (positions[i] <= positions[i - 1]) {
            fail(ErrorKind::Ordering, "full_block_forward: positions not strictly increasing");
        }
    }
    const ModelConfig & cfg = model.config;
    const LayerWeights & w = model.layers[layer];

    Matrix xn = rmsnorm_rows(x, w.attn_norm_gain, cfg.norm_eps);
    Matrix q = matmul(xn, w.w_q);
    Matrix k = matmul(xn, w.w_k);
    Matrix v = matmul(xn, w.w_v);
    apply_rope(q, cfg.num_heads, cfg.head_dim, positions, cfg.rope_theta);
    apply_rope(k, cfg.num_kv_heads, cfg.head_dim, positions, cfg.rope_theta);

    // attends over the existing cache (decode) plus the current rows
    const KvCache::Layer & cl = cache.layers[layer];
    Matrix all_k = cl.keys.rows ? cl.keys : Matrix(0, k.cols);
    Matrix all_v = cl.values.rows ? cl.values : Matrix(0, v.cols);
    std::vector<size_t> all_pos = cl.positions;
    if (!all_pos.empty() && all_pos.back() >= positions.front()) {
        fail(ErrorKind::Ordering, "full_block_forward: positions not after cached positions");
    }
    all_k.data.insert(all_k.data.end(), k.data.begin(), k.data.end());
    all_k.rows += k.rows;
    all_v.data.insert(all_v.data.end(), v.data.begin(), v.data.end());
    all_v.rows += v.rows;
    all_pos.insert(all_pos.end(), positions.begin(), positions.end());

    Matrix attn = attention_over(q, positions, all_k, all_v, all_pos,
                                 cfg.num_heads, cfg.num_kv_heads, cfg.head_dim);
    Matrix proj = matmul(attn, w.w_o);
    Matrix y = x;
    for (size_t i = 0; i < y.data.size(); ++i) {
        y.data[i] += proj.data[i];
    }
    cache_append(cache, layer, k, v, positions);
    return y;
}

Matrix ffn_sublayer(const Model & model, size_t layer, const Matrix & y) {
    const LayerWeights & w = model.layers[layer];
    Matrix yn = rmsnorm_rows(y, w.ffn_norm_gain, model.config.norm_eps);
    Matrix f = ffn_forward(w, yn);
    Matrix z = y;
    for (size_t i = 0; i < z.data.size(); ++i) {
        z.data[i] += f.data[i];
    }
    return z;
}

Matrix full_block_forward(const Model & model, size_t layer, const Matrix & x,
                          KvCache & cache, const std::vector<size_t> & positions) {
    return ffn_sublayer(model, layer, mha_sublayer(model, layer, x, cache, positions));
}

Matrix embed_tokens(const Model & model, const std::vector<uint32_t> & token_ids) {
    if (token_ids.empty()) {
        fail(ErrorKind::Input, "embed_tokens: empty token list");
    }
    Matrix x(token_ids.size(), model.config.hidden_dim);
    for (size_t i = 0; i < token_ids.size(); ++i) {
        if (token_ids[i] >= model.config.vocab_size) {
            fail(ErrorKind::Input, "embed_tokens: token id out of vocab");
        }
        std::copy(model.embedding.row(token_ids[i]),
                  model.embedding.row(token_ids[i]) + model.config.hidden_dim, x.row(i));
    }
    return x;
}

std::vector<float> output_logits(const Model & model, const std::vector<float> & hidden) {
    std::vector<float> n = rmsnorm(hidden, model.final_norm_gain, model.config.norm_eps);
    Matrix h(1, n.size());
    h.data = n;
    return matmul(h, model.head).data;
}

} // namespace spts
