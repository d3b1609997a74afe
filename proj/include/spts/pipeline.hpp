#pragma once

#include "spts/attention.hpp"
#include "spts/ffn_proxy.hpp"
#include "spts/kv_cache.hpp"
#include "spts/model.hpp"
#include "spts/schedule.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace spts {

struct PipelineState {
    Matrix hidden;                            // rows over current candidates
    std::vector<size_t> candidate_positions;  // ascending original positions
    std::optional<ScoreVector> last_mha_scores;
};

// Optional per-layer instrumentation captured during prefill.
struct LayerTrace {
    size_t layer = 0;                 // 1-indexed
    bool skipping = false;
    size_t num_candidates = 0;
    std::vector<size_t> candidate_positions;
    std::vector<size_t> active_mha;   // original positions
    std::vector<size_t> active_ffn;
    std::vector<float> mha_scores;       // aligned to candidate_positions
    std::vector<size_t> positions_after; // post-prune candidates, aligned to hidden_after
    Matrix hidden_after;                 // block output (post-prune at stage ends)
};

struct PrefillResult {
    std::vector<float> logits;
    std::vector<size_t> final_candidates;
    std::vector<LayerTrace> trace;    // filled only when requested
};

PrefillResult prefill(const Model & model, const SkipSchedule & schedule,
                      const std::vector<uint32_t> & token_ids, KvCache & cache,
                      const ProxyWeights * proxy = nullptr, bool capture_trace = false);

// Shrinks the candidate set to the top keep_count tokens by the most recent
// attention scores; the last original position is always kept.
void stage_prune(PipelineState & state, size_t keep_count);

// Full single-token forward over all layers, attending to the (possibly
// compressed) per-layer caches.
std::vector<float> decode_step(const Model & model, KvCache & cache, uint32_t token_id,
                               size_t position);

// Greedy decoding: prefill then gen_len - 1 decode steps; ties by lowest id.
std::vector<uint32_t> generate(const Model & model, const SkipSchedule & schedule,
                               const std::vector<uint32_t> & prompt_ids, size_t gen_len,
                               const ProxyWeights * proxy = nullptr);

uint32_t argmax_token(const std::vector<float> & logits);

} // namespace spts
