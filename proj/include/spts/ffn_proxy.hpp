#pragma once

#include "spts/attention.hpp"
#include "spts/matrix.hpp"
#include "spts/model.hpp"

#include <string>
#include <vector>

namespace spts {

// Rank-r factor pairs over the retained channel set; singular values are
// folded into V so each projection is exactly two factors.
struct ProxyLayer {
    std::vector<size_t> channels;   // ascending, |channels| = d_low
    Matrix u_gate, v_gate;          // D x r, r x d_low
    Matrix u_up, v_up;
    Matrix u_down, v_down;
    size_t rank = 0;
    size_t d_low = 0;
    bool present = false;
};

struct ProxyWeights {
    std::vector<ProxyLayer> layers; // indexed by 0-based layer

    const ProxyLayer & layer(size_t l) const {
        if (l >= layers.size() || !layers[l].present) {
            fail(ErrorKind::Input, "proxy weights missing for layer " + std::to_string(l + 1));
        }
        return layers[l];
    }
};

// Hidden states immediately before each FFN sub-block (post-norm), one bucket
// per layer, flattened across calibration sequences.
struct CalibrationSet {
    std::vector<std::vector<std::vector<float>>> per_layer;
};

// Full (non-skipping) forward over every calibration sequence; collects FFN
// inputs for layers [first_layer, last_layer], 1-indexed inclusive.
CalibrationSet collect_calibration(const Model & model,
                                   const std::vector<std::vector<uint32_t>> & token_sequences,
                                   size_t first_layer, size_t last_layer);

// Per-channel importance: mean of the top ceil(rho * |G|) saliency values
// z(x) = |silu(x W_gate) . (x W_up)| across the calibration set.
std::vector<float> channel_importance(const std::vector<std::vector<float>> & calib,
                                      const Matrix & w_gate, const Matrix & w_up, float rho);

ProxyLayer build_proxy(const LayerWeights & w, const std::vector<float> & importance,
                       size_t d_low, size_t rank);

// f(X) = (silu(X U_g V_g) . (X U_u V_u)) V_d^T U_d^T
Matrix proxy_forward(const Matrix & x, const ProxyLayer & p);

// C_n = ||f(X_n)||_2, S_n = C_n * S_n^MHA
ScoreVector ffn_scores(const Matrix & x_normed, const ProxyLayer & p, const ScoreVector & s_mha);

// Reduced FFN sub-block: active rows gain FFN(norm(row)), the rest are
// bitwise untouched.
void reduced_ffn(Matrix & x, const std::vector<size_t> & active, const LayerWeights & w,
                 float norm_eps);

void save_proxy(const ProxyWeights & proxy, const std::string & path);
ProxyWeights load_proxy(const std::string & path);

} // namespace spts
