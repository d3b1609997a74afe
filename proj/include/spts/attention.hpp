#pragma once

#include "spts/kv_cache.hpp"
#include "spts/matrix.hpp"
#include "spts/model.hpp"

#include <vector>

namespace spts {

// Per-candidate scores aligned to original sequence positions.
struct ScoreVector {
    std::vector<size_t> positions;  // ascending original positions
    std::vector<float> values;
};

struct PapResult {
    ScoreVector scores;
    Matrix keys;    // rotated key projections for all candidate rows, for reuse
};

// Last-token (or last probe_query_len tokens) attention probe. x_normed holds
// the pre-block normalized candidate rows; keys are computed for all rows,
// queries only for the probe rows, and the causal softmax rows are averaged
// over heads and probe rows.
PapResult pap_scores(const Matrix & x_normed, const LayerWeights & w, const ModelConfig & config,
                     const std::vector<size_t> & positions, size_t probe_query_len = 1);

// Top-M selection with forced indices always kept. Indices are row indices
// into the candidate list. Effective M clamps to the candidate count.
std::vector<size_t> select_active(const ScoreVector & scores, size_t budget,
                                  const std::vector<size_t> & forced);

// Reduced MHA sub-block over the active rows. Inactive rows of x are left
// untouched; keys are gathered from the probe's precomputed projections and
// only the active rows' K/V are appended to the cache.
void reduced_mha(Matrix & x, const Matrix & x_normed, const std::vector<size_t> & active,
                 const Matrix & precomputed_keys, const LayerWeights & w,
                 const ModelConfig & config, const std::vector<size_t> & positions,
                 KvCache & cache, size_t layer);

// Exhaustive evaluator of the last-token-loss subset objective; diagnostic
// only, n <= 12. Returns the best M-subset (row indices) and its loss.
struct MhaObjectiveResult {
    std::vector<size_t> best_subset;
    double best_loss = 0.0;
};
MhaObjectiveResult mha_objective_bruteforce(const Model & model, size_t layer, const Matrix & x,
                                            const std::vector<size_t> & positions, size_t m);

} // namespace spts
