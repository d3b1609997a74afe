#pragma once

#include "spts/common.hpp"

#include <cstddef>

namespace spts {

struct ModelConfig {
    size_t num_layers = 0;
    size_t hidden_dim = 0;     // D = num_heads * head_dim
    size_t num_heads = 0;
    size_t num_kv_heads = 0;
    size_t head_dim = 0;
    size_t ffn_dim = 0;
    size_t vocab_size = 0;
    float rope_theta = 10000.0f;
    float norm_eps = 1e-5f;
    size_t dtype_bytes = 2;    // memory accounting only; arithmetic is f32

    size_t kv_dim() const { return num_kv_heads * head_dim; }

    void validate() const {
        if (num_layers < 1 || hidden_dim < 1 || num_heads < 1 || num_kv_heads < 1 ||
            head_dim < 1 || ffn_dim < 1 || vocab_size < 1 || dtype_bytes < 1) {
            fail(ErrorKind::Input, "model config: all counts must be >= 1");
        }
        if (hidden_dim != num_heads * head_dim) {
            fail(ErrorKind::Input, "model config: hidden_dim != num_heads * head_dim");
        }
        if (num_heads % num_kv_heads != 0) {
            fail(ErrorKind::Input, "model config: num_heads not divisible by num_kv_heads");
        }
        if (head_dim % 2 != 0) {
            fail(ErrorKind::Input, "model config: head_dim must be even for rotary embedding");
        }
        if (rope_theta <= 0.0f || norm_eps <= 0.0f) {
            fail(ErrorKind::Input, "model config: rope_theta and norm_eps must be positive");
        }
    }
};

} // namespace spts
