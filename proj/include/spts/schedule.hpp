#pragma once

#include "spts/common.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace spts {

// Stage plan for prefill-time skipping. Layers are 1-indexed; layers in
// [first_skip_layer, L] are skipping layers. Layers past the last stage end
// inherit the last stage's budget and the post-final-prune candidate set.
struct SkipSchedule {
    size_t first_skip_layer = 1;          // > L disables skipping entirely
    std::vector<size_t> stage_end_layers; // ascending
    std::vector<size_t> stage_budgets;    // active-token budget per stage
    std::vector<size_t> stage_prune;      // tokens pruned at each stage end
    size_t probe_query_len = 1;

    bool enabled_for(size_t num_layers) const { return first_skip_layer <= num_layers; }
    bool is_skip_layer(size_t layer) const { return layer >= first_skip_layer; }

    // Stage index owning a skipping layer (clamped to the last stage for
    // layers past the final boundary).
    size_t stage_index(size_t layer) const;
    bool is_stage_end(size_t layer) const;

    void validate(size_t num_layers) const;

    static SkipSchedule disabled() {
        SkipSchedule s;
        s.first_skip_layer = SIZE_MAX;
        return s;
    }
};

// Per-layer counts implied by a schedule at prompt length n: how many
// candidate tokens reach each layer and how many are computed and cached.
struct LayerPlan {
    size_t candidates = 0;
    size_t active = 0;      // == cached tokens at this layer
    bool skipping = false;
};

std::vector<LayerPlan> expand_schedule(const SkipSchedule & schedule, size_t num_layers, size_t n);

SkipSchedule load_schedule(const std::string & path);
void save_schedule(const SkipSchedule & schedule, const std::string & path);

} // namespace spts
