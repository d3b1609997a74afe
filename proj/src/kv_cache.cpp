#include "spts/kv_cache.hpp"

namespace spts {

size_t KvCache::max_position(size_t layer) const {
    const auto & pos = layers[layer].positions;
    return pos.empty() ? 0 : pos.back();
}

void cache_append(KvCache & cache, size_t layer, const Matrix & keys, const Matrix & values,
                  const std::vector<size_t> & positions) {
    if (layer >= cache.layers.size()) {
        fail(ErrorKind::Shape, "cache_append: layer out of range");
    }
    if (keys.rows != positions.size() || values.rows != positions.size() ||
        keys.cols != values.cols) {
        fail(ErrorKind::Shape, "cache_append: keys/values/positions disagree");
    }
    KvCache::Layer & l = cache.layers[layer];
    if (l.keys.rows > 0 && l.keys.cols != keys.cols) {
        fail(ErrorKind::Shape, "cache_append: row width changed");
    }
    size_t prev = l.positions.empty() ? 0 : l.positions.back() + 1;
    for (size_t i = 0; i < positions.size(); ++i) {
        size_t floor = (i == 0) ? prev : positions[i - 1] + 1;
        if (!l.positions.empty() || i > 0) {
            if (positions[i] < floor) {
                fail(ErrorKind::Ordering, "cache_append: positions must be strictly ascending");
            }
        }
    }
    if (l.keys.rows == 0) {
        l.keys = Matrix(0, keys.cols);
        l.values = Matrix(0, values.cols);
    }
    l.keys.data.insert(l.keys.data.end(), keys.data.begin(), keys.data.end());
    l.keys.rows += keys.rows;
    l.values.data.insert(l.values.data.end(), values.data.begin(), values.data.end());
    l.values.rows += values.rows;
    l.positions.insert(l.positions.end(), positions.begin(), positions.end());
}

uint64_t measured_bytes(const KvCache & cache, const ModelConfig & config,
                        size_t accounting_heads) {
    size_t heads = accounting_heads ? accounting_heads : config.num_heads;
    uint64_t total = 0;
    for (const auto & l : cache.layers) {
        total += uint64_t(2) * l.positions.size() * heads * config.head_dim * config.dtype_bytes;
    }
    return total;
}

uint64_t predict_bytes(const SkipSchedule & schedule, const ModelConfig & config, size_t n,
                       size_t accounting_heads) {
    size_t heads = accounting_heads ? accounting_heads : config.num_heads;
    uint64_t tokens = 0;
    for (const LayerPlan & p : expand_schedule(schedule, config.num_layers, n)) {
        tokens += p.active;
    }
    return tokens * uint64_t(2) * heads * config.head_dim * config.dtype_bytes;
}

} // namespace spts
