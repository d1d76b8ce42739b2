#include "strata/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "strata/jsonutil.hpp"
#include "strata/seeding.hpp"

namespace strata::train {

using nlohmann::json;
using num::Tensor;

void TrainConfig::validate() const {
    auto bad = [](const std::string& f, const std::string& what) { throw ValidationError("field 'train." + f + "': " + what); };
    if (!(lr > 0.0) || !std::isfinite(lr)) bad("lr", "must be positive");
    if (!(weight_decay >= 0.0)) bad("weight_decay", "must be non-negative");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) bad("plateau_factor", "must lie in (0, 1)");
    if (patience < 1) bad("patience", "must be at least 1");
    if (step_period < 1) bad("step_period", "must be at least 1");
    if (!(step_factor > 0.0 && step_factor < 1.0)) bad("step_factor", "must lie in (0, 1)");
    if (batch_size < 1) bad("batch_size", "must be at least 1");
    if (trials < 1) bad("trials", "must be at least 1");
}

json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"epochs", c.epochs},
            {"patience", c.patience},
            {"plateau_factor", c.plateau_factor},
            {"scheduler", c.scheduler == Scheduler::Plateau ? "plateau" : "step"},
            {"step_period", c.step_period},
            {"step_factor", c.step_factor},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"trials", c.trials}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c, const std::string& path) {
    FieldReader r(j, path);
    r.get("lr", c.lr);
    r.get("weight_decay", c.weight_decay);
    r.get("epochs", c.epochs);
    r.get("patience", c.patience);
    r.get("plateau_factor", c.plateau_factor);
    r.get("step_period", c.step_period);
    r.get("step_factor", c.step_factor);
    r.get("batch_size", c.batch_size);
    r.get("seed", c.seed);
    r.get("trials", c.trials);
    if (r.has("scheduler")) {
        std::string s;
        r.get("scheduler", s);
        if (s == "plateau") c.scheduler = Scheduler::Plateau;
        else if (s == "step") c.scheduler = Scheduler::Step;
        else r.fail("scheduler", "expected 'plateau' or 'step', got '" + s + "'");
    }
    r.finish();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

NormStats NormStats::fit(const std::vector<const graph::TemporalGraphSequence*>& seqs) {
    NormStats s;
    std::array<double, 3> sum{}, sq{};
    double count = 0;
    for (const auto* seq : seqs)
        for (const auto& g : seq->graphs)
            for (std::size_t i = 0; i < g.n_nodes(); ++i) {
                for (std::size_t f = 0; f < 3; ++f) sum[f] += g.node_features.at(i, f);
                count += 1;
            }
    if (count == 0) return s;
    for (std::size_t f = 0; f < 3; ++f) s.mean[f] = sum[f] / count;
    for (const auto* seq : seqs)
        for (const auto& g : seq->graphs)
            for (std::size_t i = 0; i < g.n_nodes(); ++i)
                for (std::size_t f = 0; f < 3; ++f) {
                    const double d = g.node_features.at(i, f) - s.mean[f];
                    sq[f] += d * d;
                }
    for (std::size_t f = 0; f < 3; ++f) {
        const double sd = std::sqrt(sq[f] / count);
        s.std[f] = sd > 0.0 && std::isfinite(sd) ? sd : 1.0;
    }
    return s;
}

NormStats NormStats::fit(const std::vector<graph::TemporalGraphSequence>& seqs) {
    std::vector<const graph::TemporalGraphSequence*> p;
    for (const auto& s : seqs) p.push_back(&s);
    return fit(p);
}

void NormStats::apply(Tensor& features) const {
    const std::size_t rows = features.dim(0);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t f = 0; f < 3; ++f) features.at(i, f) = (features.at(i, f) - mean[f]) / std[f];
}

json to_json(const NormStats& s) { return {{"mean", s.mean}, {"std", s.std}}; }

NormStats norm_stats_from_json(const json& j) {
    NormStats s;
    try {
        s.mean = j.at("mean").get<std::array<double, 3>>();
        s.std = j.at("std").get<std::array<double, 3>>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("norm_stats: ") + e.what());
    }
    return s;
}

// ---------------------------------------------------------------------------

void adam_step(num::ParamStore& params, AdamState& st, double lr, double weight_decay) {
    for (const auto& p : params) {
        if (!p->grad.all_finite()) throw NumericalError("non-finite gradient in parameter '" + p->name + "'");
    }
    if (st.m.size() != params.size()) {
        st.m.clear();
        st.v.clear();
        for (const auto& p : params) {
            st.m.emplace_back(p->value.shape());
            st.v.emplace_back(p->value.shape());
        }
    }
    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    std::size_t idx = 0;
    for (auto& p : params) {
        Tensor& m = st.m[idx];
        Tensor& v = st.v[idx];
        ++idx;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i] + weight_decay * p->value[i];
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p->value[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
        }
        if (p->unit_interval)
            for (auto& x : p->value.data()) x = std::clamp(x, 0.0, 1.0);
    }
}

PlateauScheduler::PlateauScheduler(double lr, std::size_t patience, double factor)
    : lr_(lr), patience_(patience), factor_(factor) {
    if (patience_ < 1) throw ValidationError("plateau patience must be at least 1");
}

double PlateauScheduler::observe(double loss) {
    if (loss < best_) {
        best_ = loss;
        counter_ = 0;
    } else if (++counter_ >= patience_) {
        lr_ *= factor_;
        counter_ = 0;
    }
    return lr_;
}

double step_schedule(double lr0, std::size_t epoch, std::size_t period, double factor) {
    return lr0 * std::pow(factor, static_cast<double>(epoch / period));
}

// ---------------------------------------------------------------------------

std::string loss_trace_csv(const std::vector<EpochLog>& trace) {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,train_mse,val_mse,lr\n";
    for (const auto& e : trace) os << e.epoch << ',' << e.train_mse << ',' << e.val_mse << ',' << e.lr << '\n';
    return os.str();
}

void write_loss_trace(const std::filesystem::path& path, const std::vector<EpochLog>& trace) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << loss_trace_csv(trace);
}

PreparedSet prepare(const std::vector<const graph::TemporalGraphSequence*>& seqs, const NormStats& stats,
                    graph::Aggregation agg) {
    PreparedSet out;
    out.seqs = seqs;
    for (const auto* s : seqs) out.inputs.push_back(model::make_input(*s, agg, [&](Tensor& f) { stats.apply(f); }));
    return out;
}

std::vector<Tensor> predict(const model::StrataNet& net, const PreparedSet& set) {
    std::vector<Tensor> out;
    num::Rng unused(0);
    for (const auto& in : set.inputs) {
        num::Tape tape;
        out.push_back(net.forward(tape, in, unused, false).value());
    }
    return out;
}

double evaluate_mse(const model::StrataNet& net, const PreparedSet& set) {
    double sq = 0.0;
    double count = 0.0;
    num::Rng unused(0);
    for (std::size_t r = 0; r < set.inputs.size(); ++r) {
        num::Tape tape;
        const Tensor pred = net.forward(tape, set.inputs[r], unused, false).value();
        const Tensor& target = set.seqs[r]->targets;
        for (std::size_t i = 0; i < pred.size(); ++i) sq += (pred[i] - target[i]) * (pred[i] - target[i]);
        count += static_cast<double>(pred.size());
    }
    return count > 0 ? sq / count : 0.0;
}

namespace {

std::vector<Tensor> snapshot(const num::ParamStore& store) {
    std::vector<Tensor> out;
    for (const auto& p : store) out.push_back(p->value);
    return out;
}

void restore(num::ParamStore& store, const std::vector<Tensor>& values) {
    std::size_t i = 0;
    for (auto& p : store) p->value = values[i++];
}

std::string rng_text(const num::Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

}  // namespace

TrainResult train_one(const std::vector<const graph::TemporalGraphSequence*>& train_set,
                      const std::vector<const graph::TemporalGraphSequence*>& val_set, const model::ModelConfig& mcfg,
                      const TrainConfig& tcfg, std::uint64_t seed, const TrainHooks& hooks) {
    tcfg.validate();
    if (train_set.empty()) throw ValidationError("training split is empty");
    for (const auto* s : train_set) {
        if (s->k() != mcfg.k || s->m() != mcfg.m) {
            throw ValidationError("sequence '" + s->id + "' has k=" + std::to_string(s->k()) + ", m=" +
                                  std::to_string(s->m()) + " but the model expects k=" + std::to_string(mcfg.k) +
                                  ", m=" + std::to_string(mcfg.m));
        }
    }

    TrainResult res{model::StrataNet(mcfg, derive_seed(seed, "init")), NormStats::fit(train_set), {}, 0,
                    std::numeric_limits<double>::infinity(), {}};
    model::StrataNet& net = res.model;
    const PreparedSet train = prepare(train_set, res.norm, mcfg.aggregator);
    const PreparedSet val = prepare(val_set, res.norm, mcfg.aggregator);
    const PreparedSet& monitor = val.inputs.empty() ? train : val;

    num::Rng dropout_rng(derive_seed(seed, "dropout"));
    num::Rng shuffle_rng(derive_seed(seed, "shuffle"));
    AdamState adam;
    PlateauScheduler plateau(tcfg.lr, tcfg.patience, tcfg.plateau_factor);
    std::vector<Tensor> best = snapshot(net.params());
    auto checkpoint_of_best = [&] {
        std::vector<Tensor> now = snapshot(net.params());
        restore(net.params(), best);
        json j = to_json(make_checkpoint(net, tcfg, res.norm));
        restore(net.params(), now);
        return j;
    };

    std::vector<std::size_t> order(train.inputs.size());
    std::iota(order.begin(), order.end(), 0);
    double lr = tcfg.lr;
    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        if (tcfg.scheduler == Scheduler::Step) lr = step_schedule(tcfg.lr, epoch, tcfg.step_period, tcfg.step_factor);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + tcfg.batch_size);
            const double inv_b = 1.0 / static_cast<double>(stop - start);
            net.params().zero_grad();
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t r = order[b];
                num::Tape tape;
                num::Var loss = num::mse(net.forward(tape, train.inputs[r], dropout_rng, true), train.seqs[r]->targets);
                const double lv = loss.value().item();
                if (!std::isfinite(lv)) {
                    throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch) +
                                              " on record '" + train.seqs[r]->id + "'",
                                          checkpoint_of_best());
                }
                loss_sum += lv;
                tape.backward(num::scale(loss, inv_b));
            }
            try {
                adam_step(net.params(), adam, lr, tcfg.weight_decay);
            } catch (const NumericalError& e) {
                throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch), checkpoint_of_best());
            }
        }
        EpochLog log{epoch, loss_sum / static_cast<double>(order.size()), evaluate_mse(net, monitor), lr};
        if (!std::isfinite(log.val_mse)) {
            throw DivergenceError("validation loss became non-finite at epoch " + std::to_string(epoch),
                                  checkpoint_of_best());
        }
        if (log.val_mse < res.best_val) {
            res.best_val = log.val_mse;
            res.best_epoch = epoch;
            best = snapshot(net.params());
        }
        res.trace.push_back(log);
        if (hooks.on_epoch) hooks.on_epoch(log);
        if (tcfg.scheduler == Scheduler::Plateau) lr = plateau.observe(log.val_mse);
    }
    restore(net.params(), best);
    if (tcfg.epochs == 0) res.best_val = evaluate_mse(net, monitor);
    res.rng_state = rng_text(dropout_rng);
    return res;
}

// ---------------------------------------------------------------------------

Checkpoint make_checkpoint(const model::StrataNet& net, const TrainConfig& tcfg, const NormStats& norm) {
    Checkpoint ck;
    ck.config = net.config();
    ck.train = tcfg;
    ck.norm = norm;
    for (const auto& p : net.params()) ck.params.emplace_back(p->name, p->value);
    ck.alpha_values = net.alphas();
    return ck;
}

model::StrataNet Checkpoint::restore() const {
    model::StrataNet net(config, 0);
    if (params.size() != net.params().size()) {
        throw ValidationError("checkpoint holds " + std::to_string(params.size()) + " parameters, configuration needs " +
                              std::to_string(net.params().size()));
    }
    for (const auto& [name, value] : params) {
        num::Param* p = net.params().find(name);
        if (!p) throw ValidationError("checkpoint parameter '" + name + "' is not part of the configured model");
        if (p->value.shape() != value.shape()) {
            throw ValidationError("checkpoint parameter '" + name + "' has shape " + num::shape_str(value.shape()) +
                                  ", expected " + num::shape_str(p->value.shape()));
        }
        p->value = value;
    }
    return net;
}

namespace {

json split_json(const data::DatasetSplit& s) {
    return {{"seed", s.seed}, {"train", s.train}, {"val", s.val}, {"test", s.test}};
}

std::string haversine_name(graph::HaversineMode m) { return m == graph::HaversineMode::AsPrinted ? "as-printed" : "standard"; }

graph::HaversineMode haversine_from(const std::string& s, const std::string& field) {
    if (s == "as-printed") return graph::HaversineMode::AsPrinted;
    if (s == "standard") return graph::HaversineMode::Standard;
    throw ValidationError("field '" + field + "': expected 'as-printed' or 'standard', got '" + s + "'");
}

}  // namespace

json to_json(const Checkpoint& ck) {
    json params = json::object();
    for (const auto& [name, t] : ck.params) {
        params[name] = {{"shape", t.shape()}, {"values", std::vector<double>(t.data().begin(), t.data().end())}};
    }
    json j{{"format_version", Checkpoint::format_version},
           {"config", model::to_json(ck.config)},
           {"train_config", to_json(ck.train)},
           {"norm_stats", to_json(ck.norm)},
           {"partition", {{"window", ck.partition.window}, {"stride", ck.partition.stride}}},
           {"haversine", haversine_name(ck.haversine)},
           {"params", std::move(params)},
           {"alpha_values", ck.alpha_values},
           {"rng_state", ck.rng_state},
           {"best_epoch", ck.best_epoch},
           {"best_val", ck.best_val},
           {"trial", ck.trial},
           {"train_seed", ck.train_seed}};
    if (ck.split) j["split"] = split_json(*ck.split);
    return j;
}

Checkpoint checkpoint_from_json(const json& j) {
    Checkpoint ck;
    try {
        const int version = j.at("format_version").get<int>();
        if (version != Checkpoint::format_version) {
            throw ValidationError("unsupported checkpoint format_version " + std::to_string(version));
        }
        ck.config = model::model_config_from_json(j.at("config"), {}, "config");
        ck.train = train_config_from_json(j.at("train_config"), {}, "train_config");
        ck.norm = norm_stats_from_json(j.at("norm_stats"));
        ck.partition = {j.at("partition").at("window").get<std::size_t>(), j.at("partition").at("stride").get<std::size_t>()};
        ck.haversine = haversine_from(j.at("haversine").get<std::string>(), "haversine");
        for (const auto& [name, entry] : j.at("params").items()) {
            ck.params.emplace_back(name, Tensor(entry.at("shape").get<num::Shape>(),
                                                entry.at("values").get<std::vector<double>>()));
        }
        ck.alpha_values = j.at("alpha_values").get<std::vector<double>>();
        ck.rng_state = j.at("rng_state").get<std::string>();
        ck.best_epoch = j.at("best_epoch").get<std::size_t>();
        ck.best_val = j.at("best_val").get<double>();
        ck.trial = j.value("trial", std::size_t{0});
        ck.train_seed = j.value("train_seed", std::uint64_t{0});
        if (j.contains("split")) {
            const auto& s = j.at("split");
            data::DatasetSplit split;
            split.seed = s.at("seed").get<std::uint64_t>();
            split.train = s.at("train").get<std::vector<std::string>>();
            split.val = s.at("val").get<std::vector<std::string>>();
            split.test = s.at("test").get<std::vector<std::string>>();
            ck.split = split;
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("checkpoint: ") + e.what());
    } catch (const num::DimensionError& e) {
        throw ValidationError(std::string("checkpoint: ") + e.what());
    }
    ck.restore();  // validates names and shapes
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << to_json(ck).dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

// ---------------------------------------------------------------------------

ExperimentConfig experiment_config_from_json(const json& j, ExperimentConfig c) {
    FieldReader top(j, "");
    bool graph_shallow = false, graph_deep = false;
    if (const json* g = top.child("graph")) {
        FieldReader r(*g, "graph");
        r.get("window", c.graph.partition.window);
        r.get("stride", c.graph.partition.stride);
        graph_shallow = r.has("shallow");
        graph_deep = r.has("deep");
        r.get("shallow", c.graph.shallow);
        r.get("deep", c.graph.deep);
        if (r.has("haversine")) {
            std::string s;
            r.get("haversine", s);
            c.graph.haversine = haversine_from(s, "graph.haversine");
        }
        r.finish();
        c.graph.partition.validate();
        if (c.graph.shallow < 1) r.fail("shallow", "must be at least 1");
        if (c.graph.deep < 1) r.fail("deep", "must be at least 1");
    }
    if (const json* m = top.child("model")) {
        if (m->is_object()) {
            if (m->contains("k") && graph_shallow && m->at("k") != c.graph.shallow) {
                throw ValidationError("field 'model.k': conflicts with graph.shallow");
            }
            if (m->contains("m") && graph_deep && m->at("m") != c.graph.deep) {
                throw ValidationError("field 'model.m': conflicts with graph.deep");
            }
        }
        c.model = model::model_config_from_json(*m, c.model, "model");
        if (m->contains("k") && !graph_shallow) c.graph.shallow = c.model.k;
        if (m->contains("m") && !graph_deep) c.graph.deep = c.model.m;
    }
    c.model.k = c.graph.shallow;
    c.model.m = c.graph.deep;
    c.model.validate();
    if (const json* t = top.child("train")) c.train = train_config_from_json(*t, c.train, "train");
    bool explicit_min = false;
    if (const json* d = top.child("data")) {
        FieldReader r(*d, "data");
        explicit_min = r.has("min_layers");
        r.get("records", c.data.records);
        r.get("graphs", c.data.graphs);
        r.get("min_layers", c.data.min_layers);
        r.finish();
    }
    top.finish();
    if (!explicit_min) c.data.min_layers = std::max(c.data.min_layers, c.graph.shallow + c.graph.deep);
    if (c.data.min_layers < c.graph.shallow + c.graph.deep) {
        throw ValidationError("field 'data.min_layers': must be at least graph.shallow + graph.deep = " +
                              std::to_string(c.graph.shallow + c.graph.deep));
    }
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, ExperimentConfig base) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return experiment_config_from_json(j, base);
}

json to_json(const ExperimentConfig& c) {
    return {{"model", model::to_json(c.model)},
            {"train", to_json(c.train)},
            {"data", {{"records", c.data.records}, {"graphs", c.data.graphs}, {"min_layers", c.data.min_layers}}},
            {"graph",
             {{"window", c.graph.partition.window},
              {"stride", c.graph.partition.stride},
              {"haversine", haversine_name(c.graph.haversine)},
              {"shallow", c.graph.shallow},
              {"deep", c.graph.deep}}}};
}

}  // namespace strata::train
