#include "strata/evalreport.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "strata/seeding.hpp"

namespace strata::eval {

using nlohmann::json;
using num::Tensor;

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw num::DimensionError(std::string(what) + ": shape mismatch " + num::shape_str(a.shape()) + " vs " +
                                  num::shape_str(b.shape()));
    }
}

void require_pairs(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    if (a.size() != b.size()) throw num::DimensionError("prediction and target counts differ");
    if (a.empty()) throw ValidationError("no records to score");
}

}  // namespace

double rmse(const Tensor& pred, const Tensor& target) {
    require_same(pred, target, "rmse");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
    return std::sqrt(s / static_cast<double>(pred.size()));
}

double pooled_rmse(const std::vector<Tensor>& preds, const std::vector<Tensor>& targets) {
    require_pairs(preds, targets);
    double s = 0.0, n = 0.0;
    for (std::size_t r = 0; r < preds.size(); ++r) {
        require_same(preds[r], targets[r], "rmse");
        for (std::size_t i = 0; i < preds[r].size(); ++i) s += (preds[r][i] - targets[r][i]) * (preds[r][i] - targets[r][i]);
        n += static_cast<double>(preds[r].size());
    }
    return std::sqrt(s / n);
}

double mean_record_rmse(const std::vector<Tensor>& preds, const std::vector<Tensor>& targets) {
    require_pairs(preds, targets);
    double s = 0.0;
    for (std::size_t r = 0; r < preds.size(); ++r) s += rmse(preds[r], targets[r]);
    return s / static_cast<double>(preds.size());
}

namespace {

// Squared boundary error sum and term count for a [rows=layers, cols=w] view
// addressed through `at(layer, column)`.
template <class At>
std::pair<double, double> boundary_terms(std::size_t m, std::size_t w, std::size_t p, At at) {
    if (p < 1 || 2 * p > w) {
        throw ValidationError("boundary width p=" + std::to_string(p) + " must satisfy 1 <= p <= " + std::to_string(w / 2));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) s += at(i, j);
        for (std::size_t j = w - p; j < w; ++j) s += at(i, j);
    }
    return {s, static_cast<double>(2 * p * m)};
}

}  // namespace

double boundary_rmse(const Tensor& pred, const Tensor& target, std::size_t p) {
    require_same(pred, target, "boundary_rmse");
    if (pred.rank() != 2) throw num::DimensionError("boundary_rmse expects a layers x columns matrix");
    const std::size_t m = pred.dim(0), w = pred.dim(1);
    auto [s, n] = boundary_terms(m, w, p, [&](std::size_t i, std::size_t j) {
        const double e = pred.at(i, j) - target.at(i, j);
        return e * e;
    });
    return std::sqrt(s / n);
}

double pooled_boundary_rmse(const std::vector<Tensor>& preds, const std::vector<Tensor>& targets, std::size_t p) {
    require_pairs(preds, targets);
    double s = 0.0, n = 0.0;
    for (std::size_t r = 0; r < preds.size(); ++r) {
        const Tensor& a = preds[r];
        const Tensor& b = targets[r];
        require_same(a, b, "boundary_rmse");
        if (a.rank() != 2) throw num::DimensionError("boundary_rmse expects [columns, layers] predictions");
        auto [rs, rn] = boundary_terms(a.dim(1), a.dim(0), p, [&](std::size_t i, std::size_t j) {
            const double e = a.at(j, i) - b.at(j, i);
            return e * e;
        });
        s += rs;
        n += rn;
    }
    return std::sqrt(s / n);
}

std::vector<double> column_mae_profile(const std::vector<Tensor>& preds, const std::vector<Tensor>& targets) {
    require_pairs(preds, targets);
    const std::size_t w = preds[0].dim(0);
    std::vector<double> out(w, 0.0);
    double per_column = 0.0;
    for (std::size_t r = 0; r < preds.size(); ++r) {
        require_same(preds[r], targets[r], "column_mae_profile");
        if (preds[r].dim(0) != w) throw num::DimensionError("column_mae_profile: records differ in width");
        const std::size_t m = preds[r].dim(1);
        for (std::size_t c = 0; c < w; ++c)
            for (std::size_t i = 0; i < m; ++i) out[c] += std::abs(preds[r].at(c, i) - targets[r].at(c, i));
        per_column += static_cast<double>(m);
    }
    for (auto& v : out) v /= per_column;
    return out;
}

void write_mae_profile(const std::filesystem::path& path, const std::vector<double>& profile) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out.precision(17);
    out << "column,mae\n";
    for (std::size_t c = 0; c < profile.size(); ++c) out << c << ',' << profile[c] << '\n';
}

// ---------------------------------------------------------------------------

namespace {

json boundary_json(const std::map<std::size_t, double>& m) {
    json j = json::object();
    for (const auto& [p, v] : m) j[std::to_string(p)] = v;
    return j;
}

std::map<std::size_t, double> boundary_from(const json& j) {
    std::map<std::size_t, double> m;
    for (const auto& [k, v] : j.items()) m[std::stoul(k)] = v.get<double>();
    return m;
}

}  // namespace

json to_json(const TrialReport& r) {
    return {{"variant", r.variant},
            {"n_blocks", r.n_blocks},
            {"alpha0", r.alpha0},
            {"trial", r.trial},
            {"split_seed", r.split_seed},
            {"train_seed", r.train_seed},
            {"rmse", r.rmse},
            {"mean_record_rmse", r.mean_record_rmse},
            {"boundary_rmse", boundary_json(r.boundary_rmse)},
            {"fingerprint", r.fingerprint},
            {"wall_time", r.wall_time},
            {"alphas", r.alphas},
            {"best_epoch", r.best_epoch},
            {"test_records", r.test_records}};
}

TrialReport trial_report_from_json(const json& j) {
    try {
        TrialReport r;
        r.variant = j.at("variant").get<std::string>();
        r.n_blocks = j.at("n_blocks").get<std::size_t>();
        r.alpha0 = j.at("alpha0").get<double>();
        r.trial = j.at("trial").get<std::size_t>();
        r.split_seed = j.at("split_seed").get<std::uint64_t>();
        r.train_seed = j.at("train_seed").get<std::uint64_t>();
        r.rmse = j.at("rmse").get<double>();
        r.mean_record_rmse = j.at("mean_record_rmse").get<double>();
        r.boundary_rmse = boundary_from(j.at("boundary_rmse"));
        r.fingerprint = j.at("fingerprint").get<std::string>();
        r.wall_time = j.at("wall_time").get<double>();
        r.alphas = j.at("alphas").get<std::vector<double>>();
        r.best_epoch = j.at("best_epoch").get<std::size_t>();
        r.test_records = j.at("test_records").get<std::size_t>();
        return r;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("trial report: ") + e.what());
    }
}

Summary summarize(std::vector<TrialReport> trials) {
    if (trials.empty()) throw ValidationError("cannot summarize zero trials");
    Summary s;
    s.variant = trials[0].variant;
    s.n_blocks = trials[0].n_blocks;
    s.alpha0 = trials[0].alpha0;
    const double n = static_cast<double>(trials.size());
    for (const auto& t : trials) {
        s.mean += t.rmse;
        for (const auto& [p, v] : t.boundary_rmse) s.boundary_mean[p] += v / n;
    }
    s.mean /= n;
    double var = 0.0;
    for (const auto& t : trials) var += (t.rmse - s.mean) * (t.rmse - s.mean);
    s.std = std::sqrt(var / n);
    s.trials = std::move(trials);
    return s;
}

json to_json(const Summary& s) {
    json trials = json::array();
    for (const auto& t : s.trials) trials.push_back(to_json(t));
    return {{"variant", s.variant},       {"n_blocks", s.n_blocks}, {"alpha0", s.alpha0},
            {"mean_rmse", s.mean},        {"std_rmse", s.std},      {"boundary_mean", boundary_json(s.boundary_mean)},
            {"trials", std::move(trials)}};
}

Summary summary_from_json(const json& j) {
    try {
        Summary s;
        s.variant = j.at("variant").get<std::string>();
        s.n_blocks = j.at("n_blocks").get<std::size_t>();
        s.alpha0 = j.at("alpha0").get<double>();
        s.mean = j.at("mean_rmse").get<double>();
        s.std = j.at("std_rmse").get<double>();
        s.boundary_mean = boundary_from(j.at("boundary_mean"));
        for (const auto& t : j.at("trials")) s.trials.push_back(trial_report_from_json(t));
        return s;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("summary: ") + e.what());
    }
}

namespace {

std::string num_text(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

std::string report_csv(const std::vector<Summary>& rows, const std::vector<std::size_t>& ps) {
    std::ostringstream os;
    os << "variant_flags,n_blocks,alpha0,trial,rmse";
    for (auto p : ps) os << ",brmse_p" << p;
    os << '\n';
    auto lookup = [](const std::map<std::size_t, double>& m, std::size_t p) {
        auto it = m.find(p);
        return it == m.end() ? std::string() : num_text(it->second);
    };
    for (const auto& s : rows) {
        const std::string lead = s.variant + ',' + std::to_string(s.n_blocks) + ',' + num_text(s.alpha0) + ',';
        for (const auto& t : s.trials) {
            os << lead << t.trial << ',' << num_text(t.rmse);
            for (auto p : ps) os << ',' << lookup(t.boundary_rmse, p);
            os << '\n';
        }
        os << lead << "mean," << num_text(s.mean);
        for (auto p : ps) os << ',' << lookup(s.boundary_mean, p);
        os << '\n';
        os << lead << "std," << num_text(s.std);
        for (std::size_t i = 0; i < ps.size(); ++i) os << ',';
        os << '\n';
    }
    return os.str();
}

void write_reports(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                   const std::vector<Summary>& rows, const std::vector<std::size_t>& ps) {
    json all = json::array();
    for (const auto& s : rows) all.push_back(to_json(s));
    std::ofstream jo(json_path);
    if (!jo) throw ValidationError("cannot write " + json_path.string());
    jo << all.dump(1) << '\n';
    std::ofstream co(csv_path);
    if (!co) throw ValidationError("cannot write " + csv_path.string());
    co << report_csv(rows, ps);
}

std::string config_fingerprint(const model::ModelConfig& m, const train::TrainConfig& t, const train::GraphConfig& g) {
    train::ExperimentConfig c;
    c.model = m;
    c.train = t;
    c.graph = g;
    json j = train::to_json(c);
    j.erase("data");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

// ---------------------------------------------------------------------------

void AblationVariant::validate() const {
    if (!graph && !attention) throw ValidationError("ablation variant needs the graph encoder or attention blocks");
}

std::string AblationVariant::flags() const {
    std::string s;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!s.empty()) s += '+';
        s += name;
    };
    add(graph, "graph");
    add(attention, "attention");
    add(lr_skip, "lr_skip");
    add(localized, "localized");
    return s;
}

std::vector<AblationVariant> ablation_grid() {
    return {
        {true, false, false, false}, {true, false, false, true},

        {false, true, false, false}, {false, true, false, true},  {false, true, true, false},
        {false, true, true, true},

        {true, true, false, false},  {true, true, true, false},   {true, true, false, true},
        {true, true, true, true},
    };
}

VariantSetup apply_variant(const model::ModelConfig& base, const train::GraphConfig& graph, const AblationVariant& v) {
    v.validate();
    VariantSetup s{base, graph, false};
    s.model.encoder = v.graph ? model::SpatialEncoder::Sage : model::SpatialEncoder::LinearLift;
    if (!v.attention) s.model.blocks = 0;
    s.model.long_range_skip = v.lr_skip;
    // Without the SAGE stack nothing reads the edges, so the partition is left alone.
    s.fully_connected = !v.localized && v.graph;
    s.model.validate();
    return s;
}

TrialOutcome run_trial(const std::vector<data::ThicknessRecord>& records, const VariantSetup& setup,
                       const train::TrainConfig& tcfg, std::size_t trial, std::uint64_t split_seed,
                       std::uint64_t train_seed, const TrialOptions& opts, const std::string& variant) {
    const auto t0 = std::chrono::steady_clock::now();
    if (records.empty()) throw ValidationError("no records to train on");
    auto seq_opts = setup.graph.sequence_options();
    if (setup.fully_connected) seq_opts.partition = graph::PartitionSpec::fully_connected(records[0].width);
    for (const auto& r : records) {
        if (setup.fully_connected && r.width != records[0].width)
            throw ValidationError("fully connected variant needs records of equal width");
    }

    data::DatasetSplit split = data::split(records, split_seed);
    std::unordered_map<std::string, const data::ThicknessRecord*> by_id;
    for (const auto& r : records) by_id[r.id] = &r;
    auto build = [&](const std::vector<std::string>& ids) {
        std::vector<graph::TemporalGraphSequence> out;
        for (const auto& id : ids) {
            out.push_back(graph::build_sequence(*by_id.at(id), seq_opts));
        }
        return out;
    };
    const auto train_seqs = build(split.train);
    const auto val_seqs = build(split.val);
    const auto test_seqs = build(split.test);
    if (test_seqs.empty()) throw ValidationError("test split is empty; need at least 3 records");
    auto ptrs = [](const std::vector<graph::TemporalGraphSequence>& v) {
        std::vector<const graph::TemporalGraphSequence*> p;
        for (const auto& s : v) p.push_back(&s);
        return p;
    };

    if (opts.log) {
        opts.log(variant + " trial " + std::to_string(trial) + ": split seed " + std::to_string(split_seed) + ", " +
                 std::to_string(train_seqs.size()) + "/" + std::to_string(val_seqs.size()) + "/" +
                 std::to_string(test_seqs.size()) + " records");
    }
    train::TrainHooks hooks;
    hooks.on_epoch = opts.on_epoch;
    TrialOutcome out{{}, train::train_one(ptrs(train_seqs), ptrs(val_seqs), setup.model, tcfg, train_seed, hooks), split,
                     {}};

    const auto test_ptrs = ptrs(test_seqs);
    const auto prepared = train::prepare(test_ptrs, out.result.norm, setup.model.aggregator);
    const auto preds = train::predict(out.result.model, prepared);
    std::vector<Tensor> targets;
    for (const auto& s : test_seqs) targets.push_back(s.targets);

    TrialReport& r = out.report;
    r.variant = variant;
    r.n_blocks = setup.model.blocks;
    r.alpha0 = setup.model.alpha0;
    r.trial = trial;
    r.split_seed = split_seed;
    r.train_seed = train_seed;
    r.mean_record_rmse = mean_record_rmse(preds, targets);
    r.rmse = opts.per_record ? r.mean_record_rmse : pooled_rmse(preds, targets);
    for (auto p : opts.boundary_ps) r.boundary_rmse[p] = pooled_boundary_rmse(preds, targets, p);
    auto graph_cfg = setup.graph;
    graph_cfg.partition = seq_opts.partition;
    r.fingerprint = config_fingerprint(setup.model, tcfg, graph_cfg);
    r.alphas = out.result.model.alphas();
    r.best_epoch = out.result.best_epoch;
    r.test_records = test_seqs.size();
    out.mae_profile = column_mae_profile(preds, targets);
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (opts.log) {
        opts.log(variant + " trial " + std::to_string(trial) + ": test rmse " + num_text(r.rmse) + " (" +
                 num_text(r.wall_time) + " s)");
    }
    return out;
}

std::uint64_t trial_split_seed(std::size_t trial) { return static_cast<std::uint64_t>(trial); }

std::uint64_t trial_train_seed(std::uint64_t run_seed, std::size_t trial) {
    return derive_seed(run_seed, static_cast<std::uint64_t>(trial));
}

Summary run_trials(const std::vector<data::ThicknessRecord>& records, const VariantSetup& setup,
                   const train::TrainConfig& tcfg, const TrialOptions& opts, const std::string& variant) {
    std::vector<TrialReport> reports;
    for (std::size_t t = 1; t <= tcfg.trials; ++t) {
        reports.push_back(run_trial(records, setup, tcfg, t, trial_split_seed(t), trial_train_seed(tcfg.seed, t), opts,
                                     variant).report);
    }
    return summarize(std::move(reports));
}

std::vector<Summary> run_ablation(const std::vector<data::ThicknessRecord>& records, const train::ExperimentConfig& base,
                                  const std::vector<AblationVariant>& variants, const TrialOptions& opts) {
    std::vector<Summary> out;
    for (const auto& v : variants) {
        out.push_back(run_trials(records, apply_variant(base.model, base.graph, v), base.train, opts, v.flags()));
    }
    return out;
}

std::vector<Summary> run_alpha_sweep(const std::vector<data::ThicknessRecord>& records,
                                     const train::ExperimentConfig& base, const std::vector<std::size_t>& blocks,
                                     const std::vector<double>& alphas, const TrialOptions& opts) {
    for (double a : alphas) {
        if (!(a >= 0.0 && a <= 1.0)) throw ValidationError("alpha0 values must lie in [0, 1], got " + num_text(a));
    }
    std::vector<Summary> out;
    for (auto n : blocks) {
        for (double a : alphas) {
            VariantSetup s{base.model, base.graph, false};
            s.model.blocks = n;
            s.model.alpha0 = a;
            s.model.validate();
            out.push_back(run_trials(records, s, base.train, opts, "N=" + std::to_string(n) + ";alpha0=" + num_text(a)));
        }
    }
    return out;
}

}  // namespace strata::eval
