#include "spts/ffn_proxy.hpp"
#include "spts/kv_cache.hpp"
#include "spts/metrics.hpp"
#include "spts/model.hpp"
#include "spts/pipeline.hpp"
#include "spts/schedule.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace spts;

uint64_t effective_seed(uint64_t flag_seed) {
    if (const char * env = std::getenv("SPTS_SEED")) {
        return std::stoull(env);
    }
    return flag_seed;
}

std::vector<std::vector<uint32_t>> read_token_file(const std::string & path) {
    std::ifstream is(path);
    if (!is) {
        fail(ErrorKind::Input, "cannot open token file: " + path);
    }
    std::vector<std::vector<uint32_t>> seqs;
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::vector<uint32_t> seq;
        long long tok;
        while (ls >> tok) {
            if (tok < 0) {
                fail(ErrorKind::Input, "negative token id in " + path);
            }
            seq.push_back(uint32_t(tok));
        }
        if (!seq.empty()) {
            seqs.push_back(std::move(seq));
        }
    }
    if (seqs.empty()) {
        fail(ErrorKind::Input, "no token sequences in " + path);
    }
    return seqs;
}

std::vector<size_t> parse_lengths(const std::string & csv) {
    std::vector<size_t> out;
    std::istringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(std::stoull(item));
    }
    return out;
}

std::ofstream open_out(const std::string & path) {
    std::ofstream os(path);
    if (!os) {
        fail(ErrorKind::Input, "cannot open for writing: " + path);
    }
    return os;
}

int cmd_gen_model(const ModelConfig & cfg, uint64_t seed, const std::string & out) {
    Model m = gen_toy_model(cfg, seed);
    save_model(m, out);
    std::cout << "wrote " << out << " (seed " << seed << ")\n";
    return 0;
}

int cmd_calibrate(const std::string & model_path, const std::string & tokens_path,
                  size_t d_low, size_t rank, float rho, size_t first_layer,
                  const std::string & out) {
    Model model = load_model(model_path);
    auto seqs = read_token_file(tokens_path);
    if (first_layer < 1 || first_layer > model.config.num_layers) {
        fail(ErrorKind::Input, "calibrate: first layer out of range");
    }
    CalibrationSet calib = collect_calibration(model, seqs, first_layer,
                                               model.config.num_layers);
    ProxyWeights proxy;
    proxy.layers.resize(model.config.num_layers);
    for (size_t l = first_layer - 1; l < model.config.num_layers; ++l) {
        const LayerWeights & w = model.layers[l];
        std::vector<float> imp = channel_importance(calib.per_layer[l], w.w_gate, w.w_up, rho);
        proxy.layers[l] = build_proxy(w, imp, d_low, rank);

        // relative approximation error on the calibration rows
        Matrix xs(calib.per_layer[l].size(), model.config.hidden_dim);
        for (size_t i = 0; i < xs.rows; ++i) {
            std::copy(calib.per_layer[l][i].begin(), calib.per_layer[l][i].end(), xs.row(i));
        }
        Matrix full = ffn_forward(w, xs);
        Matrix approx = proxy_forward(xs, proxy.layers[l]);
        double num = 0.0, den = 0.0;
        for (size_t i = 0; i < full.data.size(); ++i) {
            double diff = double(full.data[i]) - double(approx.data[i]);
            num += diff * diff;
            den += double(full.data[i]) * double(full.data[i]);
        }
        std::cout << "layer " << (l + 1) << ": channels " << d_low << " rank " << rank
                  << " rel_err " << (den > 0 ? std::sqrt(num / den) : 0.0) << "\n";
    }
    save_proxy(proxy, out);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_run(const std::string & model_path, const std::string & schedule_path,
            const std::string & prompt_path, const std::string & proxy_path, size_t gen_len,
            bool baseline, uint64_t seed, const std::string & summary_path) {
    Model model = load_model(model_path);
    SkipSchedule schedule =
        baseline ? SkipSchedule::disabled() : load_schedule(schedule_path);
    schedule.validate(model.config.num_layers);
    ProxyWeights proxy;
    const ProxyWeights * proxy_ptr = nullptr;
    if (schedule.enabled_for(model.config.num_layers)) {
        if (proxy_path.empty()) {
            fail(ErrorKind::Input, "run: schedule enables skipping, --proxy is required");
        }
        proxy = load_proxy(proxy_path);
        proxy_ptr = &proxy;
    }
    std::vector<uint32_t> prompt = read_token_file(prompt_path).front();

    KvCache cache(model.config.num_layers);
    PrefillResult pre = prefill(model, schedule, prompt, cache, proxy_ptr, true);
    std::vector<uint32_t> out;
    out.push_back(argmax_token(pre.logits));
    for (size_t step = 1; step < gen_len; ++step) {
        out.push_back(argmax_token(
            decode_step(model, cache, out.back(), prompt.size() + step - 1)));
    }

    std::ostringstream summary;
    summary << "seed = " << seed << "\n";
    summary << "prompt_len = " << prompt.size() << "\n";
    summary << "gen_len = " << gen_len << "\n";
    summary << "cache_bytes = " << measured_bytes(cache, model.config) << "\n";
    for (const LayerTrace & t : pre.trace) {
        summary << "layer " << t.layer << ": candidates " << t.num_candidates
                << " active_mha " << t.active_mha.size()
                << " active_ffn " << t.active_ffn.size()
                << (t.skipping ? " skipping" : " full") << "\n";
    }
    summary << "final_candidates = " << pre.final_candidates.size() << "\n";
    summary << "tokens =";
    for (uint32_t t : out) {
        summary << " " << t;
    }
    summary << "\n";

    std::cout << summary.str();
    if (!summary_path.empty()) {
        open_out(summary_path) << summary.str();
    }
    return 0;
}

int cmd_bench(bool memory, bool flops, const ModelConfig & cfg,
              const std::string & schedule_path, const std::string & lengths_csv,
              size_t d_low, size_t rank, uint64_t seed, const std::string & out_path) {
    SkipSchedule schedule = load_schedule(schedule_path);
    schedule.validate(cfg.num_layers);
    std::vector<size_t> lengths = parse_lengths(lengths_csv);
    std::ostringstream csv;
    csv << "# seed=" << seed << "\n";
    if (memory) {
        csv << "N,full_bytes,spts_bytes,saving_pct\n";
        for (size_t n : lengths) {
            uint64_t full = predict_bytes(SkipSchedule::disabled(), cfg, n);
            uint64_t ours = predict_bytes(schedule, cfg, n);
            double saving = 100.0 * (1.0 - double(ours) / double(full));
            csv << n << "," << full << "," << ours << "," << saving << "\n";
        }
    }
    if (flops) {
        csv << "N,baseline_flops,spts_flops,pap_overhead,ltp_overhead,prefill_ratio,decode_ratio\n";
        for (size_t n : lengths) {
            FlopsReport r = flops_report(schedule, cfg, n, 16, {d_low, rank});
            csv << n << "," << r.prefill_baseline << "," << r.prefill_spts << ","
                << r.prefill_pap_overhead << "," << r.prefill_ltp_overhead << ","
                << r.prefill_ratio() << "," << r.decode_ratio() << "\n";
        }
    }
    std::cout << csv.str();
    if (!out_path.empty()) {
        open_out(out_path) << csv.str();
    }
    return 0;
}

int cmd_diag(const std::string & model_path, const std::string & schedule_path,
             const std::string & prompt_path, const std::string & proxy_path, uint64_t seed,
             const std::string & out_path) {
    Model model = load_model(model_path);
    SkipSchedule schedule = load_schedule(schedule_path);
    schedule.validate(model.config.num_layers);
    ProxyWeights proxy;
    const ProxyWeights * proxy_ptr = nullptr;
    if (schedule.enabled_for(model.config.num_layers)) {
        if (proxy_path.empty()) {
            fail(ErrorKind::Input, "diag: schedule enables skipping, --proxy is required");
        }
        proxy = load_proxy(proxy_path);
        proxy_ptr = &proxy;
    }
    std::vector<uint32_t> prompt = read_token_file(prompt_path).front();
    FidelityReport rep = fidelity_report(model, schedule, prompt, proxy_ptr);

    std::ostringstream csv;
    csv << "# seed=" << seed << "\n";
    csv << "layer,spts_vs_baseline_cosine,block_io_cosine\n";
    for (const LayerFidelity & lf : rep.layers) {
        csv << lf.layer << "," << lf.spts_vs_baseline_cosine << "," << lf.block_io_cosine << "\n";
    }
    csv << "# final_logit_max_abs_diff=" << rep.final_logit_max_abs_diff << "\n";
    std::cout << csv.str();
    if (!out_path.empty()) {
        open_out(out_path) << csv.str();
    }
    return 0;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"SPTS desk-scale transformer inference engine and benchmark harness"};
    app.require_subcommand(1);

    // gen-model
    auto * gen = app.add_subcommand("gen-model", "generate a seeded toy model");
    ModelConfig gen_cfg;
    gen_cfg.num_layers = 8;
    gen_cfg.hidden_dim = 64;
    gen_cfg.num_heads = 4;
    gen_cfg.num_kv_heads = 0;
    gen_cfg.head_dim = 0;
    gen_cfg.ffn_dim = 256;
    gen_cfg.vocab_size = 256;
    uint64_t seed = 42;
    std::string out;
    gen->add_option("--layers", gen_cfg.num_layers);
    gen->add_option("--dim", gen_cfg.hidden_dim);
    gen->add_option("--heads", gen_cfg.num_heads);
    gen->add_option("--kv-heads", gen_cfg.num_kv_heads, "defaults to --heads");
    gen->add_option("--head-dim", gen_cfg.head_dim, "defaults to dim / heads");
    gen->add_option("--ffn", gen_cfg.ffn_dim);
    gen->add_option("--vocab", gen_cfg.vocab_size);
    gen->add_option("--rope-theta", gen_cfg.rope_theta);
    gen->add_option("--norm-eps", gen_cfg.norm_eps);
    gen->add_option("--dtype-bytes", gen_cfg.dtype_bytes);
    gen->add_option("--seed", seed);
    gen->add_option("--out", out)->required();

    // calibrate
    auto * cal = app.add_subcommand("calibrate", "build the low-rank FFN proxy");
    std::string model_path, tokens_path, schedule_path, prompt_path, proxy_path;
    size_t d_low = 0, rank = 0, first_layer = 1, gen_len = 1;
    float rho = 0.2f;
    cal->add_option("--model", model_path)->required();
    cal->add_option("--tokens", tokens_path)->required();
    cal->add_option("--dlow", d_low)->required();
    cal->add_option("--rank", rank)->required();
    cal->add_option("--rho", rho);
    cal->add_option("--first-skip-layer", first_layer, "build proxies from this layer on");
    cal->add_option("--out", out)->required();

    // run
    auto * run = app.add_subcommand("run", "prefill + greedy decode");
    bool baseline = false;
    std::string summary_path;
    run->add_option("--model", model_path)->required();
    run->add_option("--schedule", schedule_path);
    run->add_option("--prompt-ids", prompt_path)->required();
    run->add_option("--proxy", proxy_path);
    run->add_option("--gen", gen_len);
    run->add_option("--seed", seed);
    run->add_option("--summary", summary_path, "also write the summary to this file");
    run->add_flag("--baseline", baseline, "ignore the schedule and run the full model");

    // bench
    auto * bench = app.add_subcommand("bench", "closed-form memory / FLOPs accounting");
    bool do_memory = false, do_flops = false;
    std::string lengths_csv = "8192,16384,24576,32768";
    ModelConfig bench_cfg;
    bench_cfg.num_layers = 32;
    bench_cfg.hidden_dim = 4096;
    bench_cfg.num_heads = 32;
    bench_cfg.num_kv_heads = 8;
    bench_cfg.head_dim = 128;
    bench_cfg.ffn_dim = 14336;
    bench_cfg.vocab_size = 128256;
    bench->add_flag("--memory", do_memory);
    bench->add_flag("--flops", do_flops);
    bench->add_option("--schedule", schedule_path)->required();
    bench->add_option("--lengths", lengths_csv);
    bench->add_option("--layers", bench_cfg.num_layers);
    bench->add_option("--dim", bench_cfg.hidden_dim);
    bench->add_option("--heads", bench_cfg.num_heads);
    bench->add_option("--kv-heads", bench_cfg.num_kv_heads);
    bench->add_option("--head-dim", bench_cfg.head_dim);
    bench->add_option("--ffn", bench_cfg.ffn_dim);
    bench->add_option("--vocab", bench_cfg.vocab_size);
    bench->add_option("--dtype-bytes", bench_cfg.dtype_bytes);
    bench->add_option("--dlow", d_low);
    bench->add_option("--rank", rank);
    bench->add_option("--seed", seed);
    bench->add_option("--out", out);

    // diag
    auto * diag = app.add_subcommand("diag", "fidelity diagnostics vs the full model");
    bool do_fidelity = false;
    diag->add_flag("--fidelity", do_fidelity);
    diag->add_option("--model", model_path)->required();
    diag->add_option("--schedule", schedule_path)->required();
    diag->add_option("--prompt-ids", prompt_path)->required();
    diag->add_option("--proxy", proxy_path);
    diag->add_option("--seed", seed);
    diag->add_option("--out", out);

    CLI11_PARSE(app, argc, argv);

    try {
        seed = effective_seed(seed);
        if (gen->parsed()) {
            if (gen_cfg.num_kv_heads == 0) {
                gen_cfg.num_kv_heads = gen_cfg.num_heads;
            }
            if (gen_cfg.head_dim == 0) {
                if (gen_cfg.num_heads == 0 || gen_cfg.hidden_dim % gen_cfg.num_heads != 0) {
                    fail(ErrorKind::Input, "gen-model: dim not divisible by heads");
                }
                gen_cfg.head_dim = gen_cfg.hidden_dim / gen_cfg.num_heads;
            }
            return cmd_gen_model(gen_cfg, seed, out);
        }
        if (cal->parsed()) {
            return cmd_calibrate(model_path, tokens_path, d_low, rank, rho, first_layer, out);
        }
        if (run->parsed()) {
            if (!baseline && schedule_path.empty()) {
                fail(ErrorKind::Input, "run: --schedule or --baseline is required");
            }
            return cmd_run(model_path, schedule_path, prompt_path, proxy_path,
                           std::max<size_t>(1, gen_len), baseline, seed, summary_path);
        }
        if (bench->parsed()) {
            if (!do_memory && !do_flops) {
                fail(ErrorKind::Input, "bench: pass --memory and/or --flops");
            }
            if (do_flops && (d_low == 0 || rank == 0)) {
                fail(ErrorKind::Input, "bench --flops: --dlow and --rank are required");
            }
            return cmd_bench(do_memory, do_flops, bench_cfg, schedule_path, lengths_csv,
                             d_low, rank, seed, out);
        }
        if (diag->parsed()) {
            if (!do_fidelity) {
                fail(ErrorKind::Input, "diag: pass --fidelity");
            }
            return cmd_diag(model_path, schedule_path, prompt_path, proxy_path, seed, out);
        }
    } catch (const Error & e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.kind() == ErrorKind::Numeric ? 3 : 2;
    } catch (const std::exception & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
