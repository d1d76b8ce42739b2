#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "strata/evalreport.hpp"
#include "strata/seeding.hpp"

namespace strata::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// One JSON object per line on stderr.
struct Log {
    std::string cmd;

    void operator()(const std::string& event, json fields = json::object()) const {
        fields["cmd"] = cmd;
        fields["event"] = event;
        std::cerr << fields.dump() << '\n';
    }
    void error(const std::string& kind, const std::string& message) const {
        (*this)("error", {{"kind", kind}, {"message", message}});
    }
};

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ValidationError("cannot create directory " + dir.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// Experiment configuration: file, then flag overrides.

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs, batch_size, patience, trials, d, blocks, heads, sage_layers;
    std::optional<double> lr, weight_decay, alpha0, dropout;
    std::optional<std::string> scheduler;
    std::optional<std::size_t> window, stride, shallow, deep;
    bool standard_haversine = false;

    void add_train(CLI::App& app) {
        app.add_option("--config", config, "Experiment JSON with model/train/data/graph sections")->check(CLI::ExistingFile);
        app.add_option("--seed", seed, "Run seed; overrides train.seed");
        app.add_option("--epochs", epochs, "Training epochs");
        app.add_option("--lr", lr, "Initial learning rate");
        app.add_option("--weight-decay", weight_decay, "L2 weight decay");
        app.add_option("--batch-size", batch_size, "Records per optimizer step");
        app.add_option("--patience", patience, "Plateau scheduler patience in epochs");
        app.add_option("--scheduler", scheduler, "plateau or step")->check(CLI::IsMember({"plateau", "step"}));
        app.add_option("--d", d, "Embedding width");
        app.add_option("--blocks", blocks, "Temporal attention blocks");
        app.add_option("--heads", heads, "Attention heads");
        app.add_option("--sage-layers", sage_layers, "GraphSAGE layers");
        app.add_option("--alpha0", alpha0, "Initial skip mixing weight");
        app.add_option("--dropout", dropout, "Dropout rate");
    }
    void add_trials(CLI::App& app) { app.add_option("--trials", trials, "Trials per configuration"); }
    void add_graph(CLI::App& app) {
        app.add_option("--window", window, "Partition window size W");
        app.add_option("--stride", stride, "Partition stride S");
        app.add_option("--l", shallow, "Shallow (input) layers");
        app.add_option("--m", deep, "Deep (predicted) layers");
        app.add_flag("--standard-haversine", standard_haversine, "Use the square-rooted haversine edge weight");
    }

    json patch() const {
        json p = json::object();
        auto put = [&](const char* sec, const char* key, const auto& v) {
            if (v) p[sec][key] = *v;
        };
        put("train", "seed", seed);
        put("train", "epochs", epochs);
        put("train", "lr", lr);
        put("train", "weight_decay", weight_decay);
        put("train", "batch_size", batch_size);
        put("train", "patience", patience);
        put("train", "scheduler", scheduler);
        put("train", "trials", trials);
        put("model", "d", d);
        put("model", "blocks", blocks);
        put("model", "heads", heads);
        put("model", "sage_layers", sage_layers);
        put("model", "alpha0", alpha0);
        put("model", "dropout", dropout);
        put("graph", "window", window);
        put("graph", "stride", stride);
        put("graph", "shallow", shallow);
        put("graph", "deep", deep);
        if (standard_haversine) p["graph"]["haversine"] = "standard";
        return p;
    }

    train::ExperimentConfig resolve() const {
        json j = config.empty() ? json::object() : read_json_file(config);
        if (!j.is_object()) throw ValidationError(config + ": top level must be an object");
        j.merge_patch(patch());
        return train::experiment_config_from_json(j);
    }
};

// ---------------------------------------------------------------------------
// Data sources

std::vector<data::ThicknessRecord> load_thickness(const std::string& path, std::size_t min_layers, const Log& log) {
    if (path.empty()) throw ValidationError("no radargram file given (--data or data.records)");
    const auto raw = data::load_records(path);
    auto recs = data::filter_complete(data::to_thickness(raw), min_layers);
    log("records", {{"path", path}, {"loaded", raw.size()}, {"complete", recs.size()}, {"min_layers", min_layers}});
    if (recs.empty()) throw ValidationError(path + ": no record has " + std::to_string(min_layers) + " complete layers");
    return recs;
}

std::string cache_file_name(std::size_t index, const std::string& id) {
    std::string safe;
    for (char c : id) safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05zu_", index);
    return buf + safe + ".json";
}

json graph_section(const train::GraphConfig& g) {
    return {{"window", g.partition.window},
            {"stride", g.partition.stride},
            {"haversine", g.haversine == graph::HaversineMode::Standard ? "standard" : "as-printed"},
            {"shallow", g.shallow},
            {"deep", g.deep}};
}

std::vector<graph::TemporalGraphSequence> load_graph_dir(const fs::path& dir, const train::GraphConfig& expect,
                                                         const Log& log) {
    const json manifest = read_json_file(dir / "manifest.json");
    try {
        if (manifest.at("graph") != graph_section(expect)) {
            throw ValidationError((dir / "manifest.json").string() + ": graphs were built with " +
                                  manifest.at("graph").dump() + " but the run is configured for " +
                                  graph_section(expect).dump());
        }
        std::vector<graph::TemporalGraphSequence> out;
        for (const auto& f : manifest.at("files")) out.push_back(graph::load_graph_cache(dir / f.get<std::string>()));
        log("graphs", {{"dir", dir.string()}, {"sequences", out.size()}});
        if (out.empty()) throw ValidationError(dir.string() + ": no graph caches listed");
        return out;
    } catch (const json::exception& e) {
        throw ValidationError((dir / "manifest.json").string() + ": " + e.what());
    }
}

struct Sequences {
    std::vector<graph::TemporalGraphSequence> all;

    std::vector<std::string> ids() const {
        std::vector<std::string> v;
        for (const auto& s : all) v.push_back(s.id);
        return v;
    }
    std::vector<const graph::TemporalGraphSequence*> pick(const std::vector<std::string>& ids) const {
        std::vector<const graph::TemporalGraphSequence*> out;
        for (const auto& id : ids) {
            auto it = std::find_if(all.begin(), all.end(), [&](const auto& s) { return s.id == id; });
            if (it == all.end()) throw ValidationError("record '" + id + "' is not in the supplied data");
            out.push_back(&*it);
        }
        return out;
    }
};

Sequences load_sequences(const std::string& records, const std::string& graphs, const train::ExperimentConfig& cfg,
                         const Log& log) {
    Sequences s;
    if (!graphs.empty()) {
        s.all = load_graph_dir(graphs, cfg.graph, log);
    } else {
        s.all = graph::build_sequences(load_thickness(records, cfg.data.min_layers, log), cfg.graph.sequence_options());
    }
    return s;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_synth_gen(std::size_t count, std::uint64_t seed, const std::string& out, data::SynthOptions opts, const Log& log) {
    if (count == 0) throw ValidationError("--count must be at least 1");
    log("config", {{"count", count}, {"seed", seed}, {"width", opts.width}, {"boundaries", opts.boundaries}});
    data::save_records(out, data::synth_generate(count, seed, opts));
    log("wrote", {{"path", out}, {"records", count}});
    return 0;
}

int cmd_build_graphs(const Overrides& ov, std::string in, std::string out, std::optional<std::size_t> min_layers,
                     const Log& log) {
    auto cfg = ov.resolve();
    if (min_layers) cfg.data.min_layers = *min_layers;
    if (in.empty()) in = cfg.data.records;
    if (out.empty()) out = cfg.data.graphs;
    if (out.empty()) throw ValidationError("no output directory given (--out or data.graphs)");
    if (cfg.data.min_layers < cfg.graph.shallow + cfg.graph.deep) {
        throw ValidationError("--min-layers must be at least l + m = " + std::to_string(cfg.graph.shallow + cfg.graph.deep));
    }
    log("config", {{"graph", graph_section(cfg.graph)}, {"min_layers", cfg.data.min_layers}});
    const auto recs = load_thickness(in, cfg.data.min_layers, log);
    ensure_dir(out);
    json files = json::array();
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto seq = graph::build_sequence(recs[i], cfg.graph.sequence_options());
        const auto name = cache_file_name(i, recs[i].id);
        graph::save_graph_cache(fs::path(out) / name, seq);
        files.push_back(name);
    }
    write_text(fs::path(out) / "manifest.json",
               json{{"graph", graph_section(cfg.graph)}, {"min_layers", cfg.data.min_layers}, {"files", files}}.dump(1) +
                   "\n");
    log("wrote", {{"dir", out}, {"sequences", recs.size()}});
    return 0;
}

struct TrainArgs {
    std::string data, graphs, out;
    std::size_t trial = 1;
};

int cmd_train(const Overrides& ov, const TrainArgs& a, const Log& log) {
    const auto cfg = ov.resolve();
    const std::uint64_t seed = cfg.train.seed;
    if (a.trial < 1) throw ValidationError("--trial must be at least 1");
    const auto split_seed = eval::trial_split_seed(a.trial);
    const auto train_seed = eval::trial_train_seed(seed, a.trial);
    log("config", {{"seed", seed},
                   {"trial", a.trial},
                   {"split_seed", split_seed},
                   {"train_seed", train_seed},
                   {"config", train::to_json(cfg)}});
    const Sequences seqs = load_sequences(a.data.empty() ? cfg.data.records : a.data,
                                          a.graphs.empty() ? cfg.data.graphs : a.graphs, cfg, log);
    const auto split = data::split(seqs.ids(), split_seed);
    if (split.train.empty()) throw ValidationError("training split is empty");
    log("split", {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}});
    ensure_dir(a.out);

    train::TrainHooks hooks;
    hooks.on_epoch = [&](const train::EpochLog& e) {
        log("epoch", {{"epoch", e.epoch}, {"train_mse", e.train_mse}, {"val_mse", e.val_mse}, {"lr", e.lr}});
    };
    auto finish = [&](train::Checkpoint ck) {
        ck.partition = cfg.graph.partition;
        ck.haversine = cfg.graph.haversine;
        ck.split = split;
        ck.trial = a.trial;
        ck.train_seed = train_seed;
        return ck;
    };
    try {
        auto res = train::train_one(seqs.pick(split.train), seqs.pick(split.val), cfg.model, cfg.train, train_seed, hooks);
        auto ck = train::make_checkpoint(res.model, cfg.train, res.norm);
        ck.rng_state = res.rng_state;
        ck.best_epoch = res.best_epoch;
        ck.best_val = res.best_val;
        train::save_checkpoint(fs::path(a.out) / "checkpoint.json", finish(std::move(ck)));
        train::write_loss_trace(fs::path(a.out) / "loss_trace.csv", res.trace);
        log("done", {{"best_epoch", res.best_epoch}, {"best_val_mse", res.best_val}, {"alphas", res.model.alphas()},
                     {"out", a.out}});
    } catch (const train::DivergenceError& e) {
        auto ck = finish(train::checkpoint_from_json(e.checkpoint()));
        train::save_checkpoint(fs::path(a.out) / "checkpoint_last_good.json", ck);
        log("diverged", {{"last_good", (fs::path(a.out) / "checkpoint_last_good.json").string()}});
        throw;
    }
    return 0;
}

struct EvalArgs {
    std::string checkpoint, data, graphs, out, split = "test";
    std::vector<std::size_t> boundary_ps = eval::default_boundary_ps;
    bool per_record = false;
};

int cmd_eval(const EvalArgs& a, const Log& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto ck = train::load_checkpoint(a.checkpoint);
    const model::StrataNet net = ck.restore();
    train::ExperimentConfig cfg;
    cfg.model = ck.config;
    cfg.train = ck.train;
    cfg.graph = {ck.partition, ck.haversine, ck.config.k, ck.config.m};
    cfg.data.min_layers = std::max<std::size_t>(20, ck.config.k + ck.config.m);
    log("config", {{"checkpoint", a.checkpoint}, {"split", a.split}, {"config", train::to_json(cfg)}});

    const Sequences seqs = load_sequences(a.data, a.graphs, cfg, log);
    std::vector<std::string> ids;
    if (a.split == "all") {
        ids = seqs.ids();
    } else {
        if (!ck.split) throw ValidationError(a.checkpoint + ": no stored split; use --split all");
        ids = a.split == "train" ? ck.split->train : a.split == "val" ? ck.split->val : ck.split->test;
    }
    if (ids.empty()) throw ValidationError("the " + a.split + " split is empty");
    const auto picked = seqs.pick(ids);
    const auto preds = train::predict(net, train::prepare(picked, ck.norm, ck.config.aggregator));
    std::vector<num::Tensor> targets;
    for (const auto* s : picked) targets.push_back(s->targets);

    eval::AblationVariant v{ck.config.encoder == model::SpatialEncoder::Sage, ck.config.blocks > 0,
                            ck.config.long_range_skip && ck.config.blocks > 0,
                            ck.partition.window < picked.front()->n_nodes()};
    eval::TrialReport r;
    r.variant = v.flags();
    r.n_blocks = ck.config.blocks;
    r.alpha0 = ck.config.alpha0;
    r.trial = ck.trial;
    r.split_seed = ck.split ? ck.split->seed : 0;
    r.train_seed = ck.train_seed;
    r.mean_record_rmse = eval::mean_record_rmse(preds, targets);
    r.rmse = a.per_record ? r.mean_record_rmse : eval::pooled_rmse(preds, targets);
    for (auto p : a.boundary_ps) r.boundary_rmse[p] = eval::pooled_boundary_rmse(preds, targets, p);
    r.fingerprint = eval::config_fingerprint(cfg.model, cfg.train, cfg.graph);
    r.alphas = net.alphas();
    r.best_epoch = ck.best_epoch;
    r.test_records = picked.size();
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    ensure_dir(a.out);
    write_text(fs::path(a.out) / "report.json", eval::to_json(r).dump(1) + "\n");
    write_text(fs::path(a.out) / "report.csv", eval::report_csv({eval::summarize({r})}, a.boundary_ps));
    eval::write_mae_profile(fs::path(a.out) / "mae_profile.csv", eval::column_mae_profile(preds, targets));
    log("done", {{"rmse", r.rmse}, {"records", r.test_records}, {"out", a.out}});
    std::cout << eval::to_json(r).dump() << '\n';
    return 0;
}

eval::AblationVariant parse_variant(const std::string& spec) {
    eval::AblationVariant v{false, false, false, false};
    std::stringstream ss(spec);
    for (std::string tok; std::getline(ss, tok, '+');) {
        if (tok == "graph") v.graph = true;
        else if (tok == "attention") v.attention = true;
        else if (tok == "lr_skip") v.lr_skip = true;
        else if (tok == "localized") v.localized = true;
        else throw ValidationError("unknown variant component '" + tok + "' in '" + spec + "'");
    }
    v.validate();
    return v;
}

struct ExperimentArgs {
    std::string data, out;
    std::vector<std::size_t> boundary_ps = eval::default_boundary_ps;
    bool per_record = false;
};

eval::TrialOptions trial_options(const ExperimentArgs& a, const Log& log) {
    eval::TrialOptions o;
    o.boundary_ps = a.boundary_ps;
    o.per_record = a.per_record;
    o.log = [log](const std::string& s) { log("trial", {{"message", s}}); };
    return o;
}

void write_experiment(const ExperimentArgs& a, const std::string& stem, const std::vector<eval::Summary>& rows,
                      const Log& log) {
    ensure_dir(a.out);
    eval::write_reports(fs::path(a.out) / (stem + ".json"), fs::path(a.out) / (stem + ".csv"), rows, a.boundary_ps);
    for (const auto& s : rows) {
        log("summary", {{"variant", s.variant}, {"mean_rmse", s.mean}, {"std_rmse", s.std}});
    }
}

int cmd_ablate(const Overrides& ov, const ExperimentArgs& a, const std::vector<std::string>& variant_specs,
               const Log& log) {
    const auto cfg = ov.resolve();
    std::vector<eval::AblationVariant> variants;
    for (const auto& s : variant_specs) variants.push_back(parse_variant(s));
    if (variants.empty()) variants = eval::ablation_grid();
    json names = json::array();
    for (const auto& v : variants) names.push_back(v.flags());
    log("config", {{"seed", cfg.train.seed}, {"variants", names}, {"config", train::to_json(cfg)}});
    const auto recs = load_thickness(a.data.empty() ? cfg.data.records : a.data, cfg.data.min_layers, log);
    write_experiment(a, "ablation", eval::run_ablation(recs, cfg, variants, trial_options(a, log)), log);
    return 0;
}

int cmd_alpha_sweep(const Overrides& ov, const ExperimentArgs& a, const std::vector<std::size_t>& blocks,
                    const std::vector<double>& alphas, const Log& log) {
    const auto cfg = ov.resolve();
    log("config", {{"seed", cfg.train.seed}, {"blocks", blocks}, {"alphas", alphas}, {"config", train::to_json(cfg)}});
    const auto recs = load_thickness(a.data.empty() ? cfg.data.records : a.data, cfg.data.min_layers, log);
    write_experiment(a, "alpha_sweep", eval::run_alpha_sweep(recs, cfg, blocks, alphas, trial_options(a, log)), log);
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& out, const Log& log) {
    log("config", {{"seed", seed}, {"tolerance", gradcheck_tolerance}});
    const auto results = gradcheck_suite(seed);
    bool ok = true;
    json rows = json::array();
    char line[128];
    std::snprintf(line, sizeof line, "%-28s %14s %8s  %s\n", "op", "max_rel_error", "entries", "status");
    std::cout << line;
    for (const auto& r : results) {
        const bool pass = r.passed(gradcheck_tolerance);
        ok = ok && pass;
        std::snprintf(line, sizeof line, "%-28s %14.3e %8zu  %s\n", r.name.c_str(), r.max_rel_error, r.entries,
                      pass ? "ok" : "FAIL");
        std::cout << line;
        rows.push_back({{"op", r.name},
                        {"max_rel_error", r.max_rel_error},
                        {"entries", r.entries},
                        {"worst_param", r.worst_param},
                        {"passed", pass}});
    }
    if (!out.empty()) write_text(out, json{{"seed", seed}, {"tolerance", gradcheck_tolerance}, {"ops", rows}}.dump(1) + "\n");
    if (!ok) throw NumericalError("gradient check exceeded tolerance " + std::to_string(gradcheck_tolerance));
    log("done", {{"ops", results.size()}});
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Ice-layer thickness prediction from shallow radar layers with temporal graph networks", "strata"};
    app.require_subcommand(1);
    app.fallthrough(false);

    // synth-gen
    auto* synth = app.add_subcommand("synth-gen", "Generate synthetic traced radargrams as JSON Lines");
    std::size_t synth_count = 0;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    data::SynthOptions synth_opts;
    synth->add_option("--count", synth_count, "Number of records")->required();
    synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
    synth->add_option("--out", synth_out, "Output JSONL file")->required();
    synth->add_option("--width", synth_opts.width, "Columns per record")->capture_default_str();
    synth->add_option("--boundaries", synth_opts.boundaries, "Traced boundaries per record")->capture_default_str();

    // build-graphs
    auto* build = app.add_subcommand("build-graphs", "Build partitioned temporal graph caches from radargrams");
    Overrides build_ov;
    std::string build_in, build_out;
    std::optional<std::size_t> build_min;
    build->add_option("--config", build_ov.config, "Experiment JSON (graph and data sections are used)")
        ->check(CLI::ExistingFile);
    build->add_option("--in", build_in, "Radargram JSONL file (default: data.records)");
    build->add_option("--out", build_out, "Output directory (default: data.graphs)");
    build->add_option("--min-layers", build_min, "Complete layers a record needs (default: max(20, l + m))");
    build_ov.add_graph(*build);

    // train
    auto* trn = app.add_subcommand("train", "Train one model on one seeded split");
    Overrides train_ov;
    TrainArgs train_args;
    train_ov.add_train(*trn);
    train_ov.add_graph(*trn);
    trn->add_option("--data", train_args.data, "Radargram JSONL file (default: data.records)");
    trn->add_option("--graphs", train_args.graphs, "Graph cache directory from build-graphs (default: data.graphs)");
    trn->add_option("--trial", train_args.trial, "Trial index selecting the split and training seeds")
        ->capture_default_str();
    trn->add_option("--out", train_args.out, "Output directory for checkpoint.json and loss_trace.csv")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "Score a checkpoint and write a trial report");
    EvalArgs eval_args;
    ev->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint from train")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", eval_args.data, "Radargram JSONL file");
    ev->add_option("--graphs", eval_args.graphs, "Graph cache directory");
    ev->add_option("--split", eval_args.split, "Records to score: test, val, train or all")
        ->check(CLI::IsMember({"test", "val", "train", "all"}))
        ->capture_default_str();
    ev->add_option("--boundary-p", eval_args.boundary_ps, "Boundary widths p for the boundary RMSE")->delimiter(',');
    ev->add_flag("--per-record", eval_args.per_record, "Report the mean of per-record RMSEs instead of pooled");
    ev->add_option("--out", eval_args.out, "Output directory for report.json, report.csv, mae_profile.csv")->required();

    // ablate
    auto* abl = app.add_subcommand("ablate", "Train and score component ablation variants over several trials");
    Overrides abl_ov;
    ExperimentArgs abl_args;
    std::vector<std::string> abl_variants;
    abl_ov.add_train(*abl);
    abl_ov.add_trials(*abl);
    abl_ov.add_graph(*abl);
    abl->add_option("--data", abl_args.data, "Radargram JSONL file (default: data.records)");
    abl->add_option("--variant", abl_variants,
                    "Variant as '+'-joined components from graph, attention, lr_skip, localized; repeatable "
                    "(default: the ten-row grid)");
    abl->add_option("--boundary-p", abl_args.boundary_ps, "Boundary widths p")->delimiter(',');
    abl->add_flag("--per-record", abl_args.per_record, "Report the mean of per-record RMSEs instead of pooled");
    abl->add_option("--out", abl_args.out, "Output directory for ablation.json and ablation.csv")->required();

    // alpha-sweep
    auto* sweep = app.add_subcommand("alpha-sweep", "Train and score a grid of block counts and initial alphas");
    Overrides sweep_ov;
    ExperimentArgs sweep_args;
    std::vector<std::size_t> sweep_blocks{1, 8};
    std::vector<double> sweep_alphas{0.25, 0.5, 0.75};
    sweep_ov.add_train(*sweep);
    sweep_ov.add_trials(*sweep);
    sweep_ov.add_graph(*sweep);
    sweep->add_option("--data", sweep_args.data, "Radargram JSONL file (default: data.records)");
    sweep->add_option("--n-blocks", sweep_blocks, "Block counts to sweep")->delimiter(',')->capture_default_str();
    sweep->add_option("--alphas", sweep_alphas, "Initial alpha values to sweep")->delimiter(',')->capture_default_str();
    sweep->add_option("--boundary-p", sweep_args.boundary_ps, "Boundary widths p")->delimiter(',');
    sweep->add_flag("--per-record", sweep_args.per_record, "Report the mean of per-record RMSEs instead of pooled");
    sweep->add_option("--out", sweep_args.out, "Output directory for alpha_sweep.json and alpha_sweep.csv")->required();

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every op and the tiny full model");
    std::uint64_t gc_seed = 0;
    std::string gc_out;
    gc->add_option("--seed", gc_seed, "Seed for the random inputs")->capture_default_str();
    gc->add_option("--out", gc_out, "Optional JSON report file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    CLI::App* sub = app.get_subcommands().front();
    const Log log{sub->get_name()};
    try {
        if (sub == synth) return cmd_synth_gen(synth_count, synth_seed, synth_out, synth_opts, log);
        if (sub == build) return cmd_build_graphs(build_ov, build_in, build_out, build_min, log);
        if (sub == trn) return cmd_train(train_ov, train_args, log);
        if (sub == ev) return cmd_eval(eval_args, log);
        if (sub == abl) return cmd_ablate(abl_ov, abl_args, abl_variants, log);
        if (sub == sweep) return cmd_alpha_sweep(sweep_ov, sweep_args, sweep_blocks, sweep_alphas, log);
        if (sub == gc) return cmd_gradcheck(gc_seed, gc_out, log);
    } catch (const NumericalError& e) {
        log.error("numerical", e.what());
        return 2;
    } catch (const ValidationError& e) {
        log.error("validation", e.what());
        return 1;
    } catch (const num::DimensionError& e) {
        log.error("validation", e.what());
        return 1;
    } catch (const json::exception& e) {
        log.error("validation", e.what());
        return 1;
    } catch (const fs::filesystem_error& e) {
        log.error("io", e.what());
        return 1;
    }
    return 1;
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace strata::cli
