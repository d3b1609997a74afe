#include "spts/pipeline.hpp"

#include <algorithm>

namespace spts {

namespace {

std::vector<size_t> to_original_positions(const std::vector<size_t> & rows,
                                          const std::vector<size_t> & positions) {
    std::vector<size_t> out(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        out[i] = positions[rows[i]];
    }
    return out;
}

} // namespace

void stage_prune(PipelineState & state, size_t keep_count) {
    if (keep_count < 1) {
        fail(ErrorKind::Budget, "stage_prune: keep_count must be >= 1");
    }
    if (!state.last_mha_scores) {
        fail(ErrorKind::Schedule, "stage_prune: no attention scores recorded yet");
    }
    const size_t n = state.candidate_positions.size();
    if (keep_count >= n) {
        return;
    }
    std::vector<size_t> keep = select_active(*state.last_mha_scores, keep_count, {n - 1});

    Matrix compact(keep.size(), state.hidden.cols);
    std::vector<size_t> pos(keep.size());
    ScoreVector scores;
    scores.positions.resize(keep.size());
    scores.values.resize(keep.size());
    for (size_t i = 0; i < keep.size(); ++i) {
        const size_t r = keep[i];
        std::copy(state.hidden.row(r), state.hidden.row(r) + state.hidden.cols, compact.row(i));
        pos[i] = state.candidate_positions[r];
        scores.positions[i] = state.candidate_positions[r];
        scores.values[i] = state.last_mha_scores->values[r];
    }
    state.hidden = std::move(compact);
    state.candidate_positions = std::move(pos);
    state.last_mha_scores = std::move(scores);
}

PrefillResult prefill(const Model & model, const SkipSchedule & schedule,
                      const std::vector<uint32_t> & token_ids, KvCache & cache,
                      const ProxyWeights * proxy, bool capture_trace) {
    if (token_ids.empty()) {
        fail(ErrorKind::Input, "prefill: empty prompt");
    }
    const ModelConfig & cfg = model.config;
    schedule.validate(cfg.num_layers);
    const bool skipping_enabled = schedule.enabled_for(cfg.num_layers);
    if (skipping_enabled && proxy == nullptr) {
        fail(ErrorKind::Input, "prefill: schedule enables skipping but no proxy provided");
    }
    if (cache.layers.size() != cfg.num_layers) {
        cache = KvCache(cfg.num_layers);
    }

    PipelineState state;
    state.hidden = embed_tokens(model, token_ids);
    state.candidate_positions.resize(token_ids.size());
    for (size_t i = 0; i < token_ids.size(); ++i) {
        state.candidate_positions[i] = i;
    }

    PrefillResult result;
    for (size_t layer = 1; layer <= cfg.num_layers; ++layer) {
        const size_t li = layer - 1;
        const size_t n = state.candidate_positions.size();
        LayerTrace trace;
        trace.layer = layer;
        trace.num_candidates = n;

        if (!skipping_enabled || !schedule.is_skip_layer(layer)) {
            state.hidden = full_block_forward(model, li, state.hidden, cache,
                                              state.candidate_positions);
            if (capture_trace) {
                trace.candidate_positions = state.candidate_positions;
                trace.active_mha = state.candidate_positions;
                trace.active_ffn = state.candidate_positions;
            }
        } else {
            trace.skipping = true;
            const LayerWeights & w = model.layers[li];
            const size_t budget = schedule.stage_budgets[schedule.stage_index(layer)];
            const size_t m = std::min(n, budget);

            Matrix xn = rmsnorm_rows(state.hidden, w.attn_norm_gain, cfg.norm_eps);
            PapResult pap = pap_scores(xn, w, cfg, state.candidate_positions,
                                       std::min(schedule.probe_query_len, n));

            std::vector<size_t> active_mha = select_active(pap.scores, m, {n - 1});
            reduced_mha(state.hidden, xn, active_mha, pap.keys, w, cfg,
                        state.candidate_positions, cache, li);

            Matrix yn = rmsnorm_rows(state.hidden, w.ffn_norm_gain, cfg.norm_eps);
            ScoreVector s_ffn = ffn_scores(yn, proxy->layer(li), pap.scores);
            std::vector<size_t> active_ffn = select_active(s_ffn, m, {n - 1});
            reduced_ffn(state.hidden, active_ffn, w, cfg.norm_eps);

            state.last_mha_scores = pap.scores;
            if (capture_trace) {
                trace.candidate_positions = state.candidate_positions;
                trace.active_mha = to_original_positions(active_mha, state.candidate_positions);
                trace.active_ffn = to_original_positions(active_ffn, state.candidate_positions);
                trace.mha_scores = pap.scores.values;
            }
            if (schedule.is_stage_end(layer)) {
                const size_t prune = schedule.stage_prune[schedule.stage_index(layer)];
                const size_t keep = n > prune ? n - prune : 1;
                stage_prune(state, keep);
            }
        }
        if (capture_trace) {
            trace.positions_after = state.candidate_positions;
            trace.hidden_after = state.hidden;
            result.trace.push_back(std::move(trace));
        }
    }

    std::vector<float> last(state.hidden.row(state.hidden.rows - 1),
                            state.hidden.row(state.hidden.rows - 1) + state.hidden.cols);
    result.logits = output_logits(model, last);
    result.final_candidates = state.candidate_positions;
    return result;
}

std::vector<float> decode_step(const Model & model, KvCache & cache, uint32_t token_id,
                               size_t position) {
    for (size_t l = 0; l < model.config.num_layers; ++l) {
        if (!cache.layers[l].positions.empty() && cache.layers[l].positions.back() >= position) {
            fail(ErrorKind::Ordering, "decode_step: position not past cached positions");
        }
    }
    Matrix x = embed_tokens(model, {token_id});
    std::vector<size_t> pos = {position};
    for (size_t l = 0; l < model.config.num_layers; ++l) {
        x = full_block_forward(model, l, x, cache, pos);
    }
    std::vector<float> hidden(x.row(0), x.row(0) + x.cols);
    return output_logits(model, hidden);
}

uint32_t argmax_token(const std::vector<float> & logits) {
    size_t best = 0;
    for (size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) {
            best = i;
        }
    }
    return uint32_t(best);
}

std::vector<uint32_t> generate(const Model & model, const SkipSchedule & schedule,
                               const std::vector<uint32_t> & prompt_ids, size_t gen_len,
                               const ProxyWeights * proxy) {
    if (gen_len < 1) {
        fail(ErrorKind::Input, "generate: gen_len must be >= 1");
    }
    KvCache cache(model.config.num_layers);
    PrefillResult pre = prefill(model, schedule, prompt_ids, cache, proxy);
    std::vector<uint32_t> out;
    out.push_back(argmax_token(pre.logits));
    size_t position = prompt_ids.size();
    for (size_t step = 1; step < gen_len; ++step) {
        std::vector<float> logits = decode_step(model, cache, out.back(), position);
        out.push_back(argmax_token(logits));
        ++position;
    }
    return out;
}

} // namespace spts
