#pragma once

#include "spts/config.hpp"
#include "spts/matrix.hpp"
#include "spts/schedule.hpp"

#include <cstddef>
#include <vector>

namespace spts {

// Per-layer key/value store. Lengths vary per layer; every row is tagged with
// its original sequence position and positions stay strictly increasing.
struct KvCache {
    struct Layer {
        Matrix keys;    // len x (num_kv_heads * head_dim)
        Matrix values;
        std::vector<size_t> positions;
    };

    std::vector<Layer> layers;

    explicit KvCache(size_t num_layers = 0) : layers(num_layers) {}

    size_t len(size_t layer) const { return layers[layer].positions.size(); }
    size_t max_position(size_t layer) const;
};

// layer is 0-indexed here and throughout the cache API.
void cache_append(KvCache & cache, size_t layer, const Matrix & keys, const Matrix & values,
                  const std::vector<size_t> & positions);

// Accounting follows the full-head fp16 convention by default: pass
// accounting_heads = 0 to count config.num_heads, or a positive value (e.g.
// num_kv_heads) to override.
uint64_t measured_bytes(const KvCache & cache, const ModelConfig & config,
                        size_t accounting_heads = 0);

// Closed-form prediction of measured_bytes after a prefill of n tokens.
uint64_t predict_bytes(const SkipSchedule & schedule, const ModelConfig & config, size_t n,
                       size_t accounting_heads = 0);

} // namespace spts
