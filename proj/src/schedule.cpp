#include "spts/schedule.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace spts {

size_t SkipSchedule::stage_index(size_t layer) const {
    for (size_t s = 0; s < stage_end_layers.size(); ++s) {
        if (layer <= stage_end_layers[s]) {
            return s;
        }
    }
    if (stage_end_layers.empty()) {
        fail(ErrorKind::Schedule, "schedule: no stages defined");
    }
    return stage_end_layers.size() - 1;
}

bool SkipSchedule::is_stage_end(size_t layer) const {
    return std::find(stage_end_layers.begin(), stage_end_layers.end(), layer) !=
           stage_end_layers.end();
}

void SkipSchedule::validate(size_t num_layers) const {
    if (probe_query_len < 1) {
        fail(ErrorKind::Schedule, "schedule: probe_query_len must be >= 1");
    }
    if (!enabled_for(num_layers)) {
        return;
    }
    if (stage_end_layers.empty()) {
        fail(ErrorKind::Schedule, "schedule: skipping enabled but no stages defined");
    }
    if (stage_budgets.size() != stage_end_layers.size() ||
        stage_prune.size() != stage_end_layers.size()) {
        fail(ErrorKind::Schedule, "schedule: budgets/prune must match stage count");
    }
    if (first_skip_layer < 1 || first_skip_layer > stage_end_layers.front()) {
        fail(ErrorKind::Schedule, "schedule: first_skip_layer must precede first stage end");
    }
    for (size_t s = 0; s < stage_end_layers.size(); ++s) {
        if (s > 0 && stage_end_layers[s] <= stage_end_layers[s - 1]) {
            fail(ErrorKind::Schedule, "schedule: stage ends must be strictly ascending");
        }
        if (stage_end_layers[s] > num_layers) {
            fail(ErrorKind::Schedule, "schedule: stage end past last layer");
        }
        if (stage_budgets[s] < 1) {
            fail(ErrorKind::Schedule, "schedule: budgets must be positive");
        }
        if (s > 0 && stage_budgets[s] > stage_budgets[s - 1]) {
            fail(ErrorKind::Schedule, "schedule: budgets must be non-increasing");
        }
    }
}

std::vector<LayerPlan> expand_schedule(const SkipSchedule & schedule, size_t num_layers, size_t n) {
    schedule.validate(num_layers);
    if (n < 1) {
        fail(ErrorKind::Input, "expand_schedule: empty prompt");
    }
    std::vector<LayerPlan> plan(num_layers);
    size_t candidates = n;
    for (size_t layer = 1; layer <= num_layers; ++layer) {
        LayerPlan & p = plan[layer - 1];
        p.candidates = candidates;
        if (schedule.enabled_for(num_layers) && schedule.is_skip_layer(layer)) {
            p.skipping = true;
            p.active = std::min(candidates, schedule.stage_budgets[schedule.stage_index(layer)]);
            if (schedule.is_stage_end(layer)) {
                size_t prune = schedule.stage_prune[schedule.stage_index(layer)];
                candidates = std::max<size_t>(1, candidates > prune ? candidates - prune : 1);
            }
        } else {
            p.active = candidates;
        }
    }
    return plan;
}

namespace {

std::vector<size_t> parse_size_list(const std::string & s, const std::string & key) {
    std::vector<size_t> out;
    std::string item;
    std::istringstream ss(s);
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoull(item));
        } catch (const std::exception &) {
            fail(ErrorKind::Format, "schedule: bad value for " + key + ": " + item);
        }
    }
    return out;
}

std::string strip(const std::string & s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return "";
    }
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

SkipSchedule load_schedule(const std::string & path) {
    std::ifstream is(path);
    if (!is) {
        fail(ErrorKind::Input, "cannot open schedule file: " + path);
    }
    SkipSchedule sched;
    std::string line;
    while (std::getline(is, line)) {
        std::string t = strip(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            fail(ErrorKind::Format, "schedule: expected key = value, got: " + line);
        }
        std::string key = strip(t.substr(0, eq));
        std::string val = strip(t.substr(eq + 1));
        if (key == "first_skip_layer") {
            sched.first_skip_layer = std::stoull(val);
        } else if (key == "stage_ends") {
            sched.stage_end_layers = parse_size_list(val, key);
        } else if (key == "budgets") {
            sched.stage_budgets = parse_size_list(val, key);
        } else if (key == "prune") {
            sched.stage_prune = parse_size_list(val, key);
        } else if (key == "probe_query_len") {
            sched.probe_query_len = std::stoull(val);
        } else {
            fail(ErrorKind::Format, "schedule: unknown key " + key);
        }
    }
    return sched;
}

void save_schedule(const SkipSchedule & schedule, const std::string & path) {
    std::ofstream os(path);
    if (!os) {
        fail(ErrorKind::Input, "cannot open for writing: " + path);
    }
    auto join = [](const std::vector<size_t> & v) {
        std::ostringstream ss;
        for (size_t i = 0; i < v.size(); ++i) {
            ss << (i ? "," : "") << v[i];
        }
        return ss.str();
    };
    os << "first_skip_layer = " << schedule.first_skip_layer << "\n";
    os << "stage_ends = " << join(schedule.stage_end_layers) << "\n";
    os << "budgets = " << join(schedule.stage_budgets) << "\n";
    os << "prune = " << join(schedule.stage_prune) << "\n";
    os << "probe_query_len = " << schedule.probe_query_len << "\n";
}

} // namespace spts
