#include "spts/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace spts {

uint64_t ltp_projection_macs(size_t d, size_t d_low, size_t rank) {
    return uint64_t(d) * rank + uint64_t(rank) * d_low;
}

namespace {

// dense-math GEMM counting: 2 flops per multiply-accumulate
uint64_t gemm(uint64_t m, uint64_t k, uint64_t n) { return 2 * m * k * n; }

uint64_t attn_projections(const ModelConfig & c, uint64_t rows) {
    return gemm(rows, c.hidden_dim, c.num_heads * c.head_dim) +       // Q
           gemm(rows, c.hidden_dim, c.kv_dim()) * 2 +                 // K, V
           gemm(rows, c.num_heads * c.head_dim, c.hidden_dim);        // O
}

// causal attention over rows tokens plus an optional pre-existing context
uint64_t attn_scores(const ModelConfig & c, uint64_t rows, uint64_t context) {
    // QK^T and AV, each 2*d flops per (query, visible key) pair
    uint64_t pairs = rows * context + rows * (rows + 1) / 2;
    return 4 * pairs * c.num_heads * c.head_dim;
}

uint64_t ffn_flops(const ModelConfig & c, uint64_t rows) {
    return 3 * gemm(rows, c.hidden_dim, c.ffn_dim) + 2 * rows * c.ffn_dim;
}

uint64_t block_flops(const ModelConfig & c, uint64_t rows, uint64_t context) {
    return attn_projections(c, rows) + attn_scores(c, rows, context) + ffn_flops(c, rows);
}

} // namespace

FlopsReport flops_report(const SkipSchedule & schedule, const ModelConfig & config, size_t n,
                         size_t gen_len, const ProxyDims & proxy_dims) {
    schedule.validate(config.num_layers);
    const bool enabled = schedule.enabled_for(config.num_layers);
    if (enabled && (proxy_dims.d_low == 0 || proxy_dims.rank == 0)) {
        fail(ErrorKind::Input, "flops_report: proxy dims required when skipping is enabled");
    }
    std::vector<LayerPlan> plan = expand_schedule(schedule, config.num_layers, n);

    FlopsReport r;
    r.per_layer.resize(config.num_layers);
    for (size_t l = 0; l < config.num_layers; ++l) {
        const LayerPlan & p = plan[l];
        LayerFlops & lf = r.per_layer[l];
        lf.baseline_block = block_flops(config, n, 0);
        if (!p.skipping) {
            lf.spts_block = block_flops(config, p.candidates, 0);
        } else {
            const size_t qlen = std::min(schedule.probe_query_len, p.candidates);
            lf.pap_probe = gemm(p.candidates, config.hidden_dim, config.kv_dim()) +
                           gemm(qlen, config.hidden_dim, config.num_heads * config.head_dim) +
                           gemm(qlen, config.head_dim, p.candidates) * config.num_heads +
                           5 * uint64_t(qlen) * config.num_heads * p.candidates;
            lf.ltp_probe = uint64_t(p.candidates) * 2 *
                           (3 * uint64_t(config.hidden_dim) * proxy_dims.rank +
                            3 * uint64_t(proxy_dims.rank) * proxy_dims.d_low + proxy_dims.d_low);
            // K projection lives in the probe; Q/V/O plus causal attention and
            // FFN run over the active rows only.
            const uint64_t m = p.active;
            lf.spts_block = gemm(m, config.hidden_dim, config.num_heads * config.head_dim) +
                            gemm(m, config.hidden_dim, config.kv_dim()) +
                            gemm(m, config.num_heads * config.head_dim, config.hidden_dim) +
                            attn_scores(config, m, 0) + ffn_flops(config, m);
        }
        r.prefill_baseline += lf.baseline_block;
        r.prefill_spts += lf.spts_block + lf.pap_probe + lf.ltp_probe;
        r.prefill_pap_overhead += lf.pap_probe;
        r.prefill_ltp_overhead += lf.ltp_probe;
    }

    // Decode is always full per-token compute; the two engines differ only in
    // cache length per layer.
    for (size_t step = 0; step < gen_len; ++step) {
        for (size_t l = 0; l < config.num_layers; ++l) {
            r.decode_baseline += attn_projections(config, 1) +
                                 attn_scores(config, 1, n + step) + ffn_flops(config, 1);
            r.decode_spts += attn_projections(config, 1) +
                             attn_scores(config, 1, plan[l].active + step) + ffn_flops(config, 1);
        }
    }
    return r;
}

FidelityReport fidelity_report(const Model & model, const SkipSchedule & schedule,
                               const std::vector<uint32_t> & prompt_ids,
                               const ProxyWeights * proxy) {
    KvCache base_cache(model.config.num_layers);
    KvCache spts_cache(model.config.num_layers);
    PrefillResult base = prefill(model, SkipSchedule::disabled(), prompt_ids, base_cache,
                                 nullptr, true);
    PrefillResult ours = prefill(model, schedule, prompt_ids, spts_cache, proxy, true);

    FidelityReport rep;
    Matrix prev_base = embed_tokens(model, prompt_ids);
    for (size_t l = 0; l < model.config.num_layers; ++l) {
        const LayerTrace & bt = base.trace[l];
        const LayerTrace & st = ours.trace[l];
        LayerFidelity lf;
        lf.layer = l + 1;

        double io_acc = 0.0;
        for (size_t i = 0; i < prev_base.rows; ++i) {
            std::vector<float> a(prev_base.row(i), prev_base.row(i) + prev_base.cols);
            std::vector<float> b(bt.hidden_after.row(i), bt.hidden_after.row(i) + prev_base.cols);
            io_acc += cosine_sim(a, b);
        }
        lf.block_io_cosine = io_acc / double(prev_base.rows);

        // surviving SPTS candidates map back to baseline rows by original position
        double acc = 0.0;
        for (size_t i = 0; i < st.hidden_after.rows; ++i) {
            const size_t pos = st.positions_after[i];
            std::vector<float> a(st.hidden_after.row(i),
                                 st.hidden_after.row(i) + st.hidden_after.cols);
            std::vector<float> b(bt.hidden_after.row(pos),
                                 bt.hidden_after.row(pos) + st.hidden_after.cols);
            acc += cosine_sim(a, b);
        }
        lf.spts_vs_baseline_cosine = acc / double(st.hidden_after.rows);
        rep.layers.push_back(lf);
        prev_base = bt.hidden_after;
    }
    double mx = 0.0;
    for (size_t i = 0; i < base.logits.size(); ++i) {
        mx = std::max(mx, std::abs(double(base.logits[i]) - double(ours.logits[i])));
    }
    rep.final_logit_max_abs_diff = mx;
    return rep;
}

size_t attention_coverage(const std::vector<float> & attn_row, double p) {
    if (p <= 0.0 || p >= 1.0) {
        fail(ErrorKind::Input, "attention_coverage: p must be in (0, 1)");
    }
    double sum = 0.0;
    for (float v : attn_row) {
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-5) {
        fail(ErrorKind::Input, "attention_coverage: row is not a probability vector");
    }
    std::vector<float> sorted = attn_row;
    std::sort(sorted.begin(), sorted.end(), std::greater<float>());
    double acc = 0.0;
    for (size_t k = 0; k < sorted.size(); ++k) {
        acc += sorted[k];
        if (acc >= p) {
            return k + 1;
        }
    }
    return sorted.size();
}

double selection_jaccard(const std::vector<size_t> & a, const std::vector<size_t> & b) {
    if (a.empty() && b.empty()) {
        return 1.0;
    }
    std::vector<size_t> sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    std::vector<size_t> inter, uni;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
    std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(uni));
    return double(inter.size()) / double(uni.size());
}

} // namespace spts
