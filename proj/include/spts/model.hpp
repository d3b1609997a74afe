#pragma once

#include "spts/config.hpp"
#include "spts/kv_cache.hpp"
#include "spts/matrix.hpp"
#include "spts/tensor_file.hpp"

#include <string>
#include <vector>

namespace spts {

struct LayerWeights {
    Matrix w_q;     // D x (H * d)
    Matrix w_k;     // D x (num_kv_heads * d)
    Matrix w_v;     // D x (num_kv_heads * d)
    Matrix w_o;     // (H * d) x D
    Matrix w_gate;  // D x D_ff
    Matrix w_up;    // D x D_ff
    Matrix w_down;  // D x D_ff, applied transposed
    std::vector<float> attn_norm_gain;
    std::vector<float> ffn_norm_gain;
};

struct Model {
    ModelConfig config;
    Matrix embedding;   // vocab x D
    Matrix head;        // D x vocab
    std::vector<float> final_norm_gain;
    std::vector<LayerWeights> layers;
};

Model gen_toy_model(const ModelConfig & config, uint64_t seed);

void save_model(const Model & model, const std::string & path);
Model load_model(const std::string & path);

// Row-wise RMSNorm with a shared gain vector.
Matrix rmsnorm_rows(const Matrix & x, const std::vector<float> & gain, float eps);

// Rotary embedding over per-head halves, indexed by original positions.
void apply_rope(Matrix & x, size_t num_heads, size_t head_dim,
                const std::vector<size_t> & positions, float theta);

// Causal multi-head attention of q rows (positions qpos) over key/value rows
// (positions kpos). Q/K are expected already rotated. Returns n x (H * d).
Matrix attention_over(const Matrix & q, const std::vector<size_t> & qpos,
                      const Matrix & k, const Matrix & v, const std::vector<size_t> & kpos,
                      size_t num_heads, size_t num_kv_heads, size_t head_dim);

// SwiGLU feed-forward on already-normalized rows.
Matrix ffn_forward(const LayerWeights & w, const Matrix & x_normed);

// y = x + MHA(norm(x)); appends this layer's K/V for every row to the cache.
// layer is 0-indexed.
Matrix mha_sublayer(const Model & model, size_t layer, const Matrix & x,
                    KvCache & cache, const std::vector<size_t> & positions);

// z = y + FFN(norm(y))
Matrix ffn_sublayer(const Model & model, size_t layer, const Matrix & y);

// One full transformer block (MHA + FFN, pre-norm, residual).
Matrix full_block_forward(const Model & model, size_t layer, const Matrix & x,
                          KvCache & cache, const std::vector<size_t> & positions);

Matrix embed_tokens(const Model & model, const std::vector<uint32_t> & token_ids);

// Final norm + output head for a single hidden row.
std::vector<float> output_logits(const Model & model, const std::vector<float> & hidden);

} // namespace spts
