#pragma once

#include "spts/config.hpp"
#include "spts/ffn_proxy.hpp"
#include "spts/model.hpp"
#include "spts/pipeline.hpp"
#include "spts/schedule.hpp"

#include <cstdint>
#include <vector>

namespace spts {

struct ProxyDims {
    size_t d_low = 0;
    size_t rank = 0;
};

// Per-token per-projection probe cost of one low-rank factor pair, counted as
// multiply-accumulates (the unit the proxy-scale ablation is quoted in).
uint64_t ltp_projection_macs(size_t d, size_t d_low, size_t rank);

struct LayerFlops {
    uint64_t baseline_block = 0;
    uint64_t spts_block = 0;
    uint64_t pap_probe = 0;
    uint64_t ltp_probe = 0;
};

struct FlopsReport {
    uint64_t prefill_baseline = 0;
    uint64_t prefill_spts = 0;          // includes probe overhead
    uint64_t prefill_pap_overhead = 0;
    uint64_t prefill_ltp_overhead = 0;
    uint64_t decode_baseline = 0;
    uint64_t decode_spts = 0;
    std::vector<LayerFlops> per_layer;  // prefill only

    double prefill_ratio() const {
        return prefill_spts ? double(prefill_baseline) / double(prefill_spts) : 1.0;
    }
    double decode_ratio() const {
        return decode_spts ? double(decode_baseline) / double(decode_spts) : 1.0;
    }
};

FlopsReport flops_report(const SkipSchedule & schedule, const ModelConfig & config, size_t n,
                         size_t gen_len, const ProxyDims & proxy_dims);

struct LayerFidelity {
    size_t layer = 0;                  // 1-indexed
    double spts_vs_baseline_cosine = 1.0;  // mean over surviving candidates
    double block_io_cosine = 1.0;          // baseline block input vs output
};

struct FidelityReport {
    std::vector<LayerFidelity> layers;
    double final_logit_max_abs_diff = 0.0;
};

FidelityReport fidelity_report(const Model & model, const SkipSchedule & schedule,
                               const std::vector<uint32_t> & prompt_ids,
                               const ProxyWeights * proxy);

// Minimal number of largest entries of a probability row summing to >= p.
size_t attention_coverage(const std::vector<float> & attn_row, double p);

double selection_jaccard(const std::vector<size_t> & a, const std::vector<size_t> & b);

} // namespace spts
