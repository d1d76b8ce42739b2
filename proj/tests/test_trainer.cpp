#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <limits>

#include "strata/seeding.hpp"
#include "strata/trainer.hpp"
#include "support.hpp"

using namespace strata;
using namespace strata::train;
using num::Tensor;

namespace {

std::vector<graph::TemporalGraphSequence> small_sequences(std::size_t count, std::uint64_t seed, std::size_t width = 16) {
    auto recs = data::filter_complete(data::to_thickness(data::synth_generate(count, seed, {width, 21})));
    return graph::build_sequences(recs, {});
}

std::vector<const graph::TemporalGraphSequence*> ptrs(const std::vector<graph::TemporalGraphSequence>& v,
                                                      std::size_t from = 0, std::size_t to = SIZE_MAX) {
    std::vector<const graph::TemporalGraphSequence*> out;
    for (std::size_t i = from; i < std::min(to, v.size()); ++i) out.push_back(&v[i]);
    return out;
}

model::ModelConfig small_model() {
    model::ModelConfig c;
    c.d = 8;
    c.sage_layers = 2;
    c.blocks = 2;
    c.heads = 2;
    return c;
}

}  // namespace

TEST_SUITE("adam") {
    TEST_CASE("zero gradients without decay leave params unchanged") {
        std::mt19937_64 rng(1);
        num::ParamStore s;
        test::random_param(s, "w", {3, 2}, rng);
        const Tensor before = s.get("w").value;
        AdamState st;
        for (int i = 0; i < 3; ++i) adam_step(s, st, 1e-2, 0.0);
        CHECK(s.get("w").value == before);
    }

    TEST_CASE("scalar recurrence matches a hand evaluation") {
        num::ParamStore s;
        auto& p = s.add("x", Tensor::scalar(0.5));
        AdamState st;
        const double lr = 0.1, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        double x = 0.5, m = 0, v = 0;
        const double grads[] = {0.3, -1.2, 0.7, 2.0};
        for (int t = 1; t <= 4; ++t) {
            p.grad[0] = grads[t - 1];
            adam_step(s, st, lr, wd);
            const double g = grads[t - 1] + wd * x;
            m = b1 * m + (1 - b1) * g;
            v = b2 * v + (1 - b2) * g * g;
            x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
            CHECK(std::abs(p.value[0] - x) <= 1e-15);
        }
        // first step moves by exactly lr in the gradient's direction (up to eps)
        num::ParamStore s2;
        auto& q = s2.add("q", Tensor::scalar(0.0));
        q.grad[0] = 4.0;
        AdamState st2;
        adam_step(s2, st2, 0.05, 0.0);
        CHECK(q.value[0] == doctest::Approx(-0.05).epsilon(1e-8));
    }

    TEST_CASE("unit-interval params are clamped") {
        num::ParamStore s;
        auto& a = s.add("alpha", Tensor::scalar(0.99), true);
        auto& b = s.add("beta", Tensor::scalar(0.01), true);
        a.grad[0] = -5.0;
        b.grad[0] = 5.0;
        AdamState st;
        adam_step(s, st, 0.5, 0.0);
        CHECK(a.value[0] == 1.0);
        CHECK(b.value[0] == 0.0);
    }

    TEST_CASE("non-finite gradient names the param") {
        num::ParamStore s;
        s.add("ok", Tensor::scalar(1.0));
        auto& bad = s.add("blocks.0.attn.wq", Tensor({2, 2}));
        bad.grad[3] = std::numeric_limits<double>::quiet_NaN();
        AdamState st;
        CHECK_THROWS_WITH_AS(adam_step(s, st, 1e-3, 0.0), doctest::Contains("blocks.0.attn.wq"), NumericalError);
        CHECK(s.get("ok").value[0] == 1.0);
    }
}

TEST_SUITE("schedulers") {
    TEST_CASE("strictly decreasing loss never changes the rate") {
        PlateauScheduler p(3e-4, 12, 0.5);
        for (int e = 0; e < 200; ++e) CHECK(p.observe(100.0 - e) == 3e-4);
    }

    TEST_CASE("constant loss halves at epochs 12, 24 and 36") {
        PlateauScheduler p(1.0, 12, 0.5);
        std::vector<std::size_t> halvings;
        double lr = 1.0;
        for (std::size_t e = 0; e < 40; ++e) {
            const double next = p.observe(5.0);
            if (next != lr) halvings.push_back(e);
            lr = next;
        }
        CHECK(halvings == std::vector<std::size_t>{12, 24, 36});
        CHECK(lr == 0.125);
    }

    TEST_CASE("improvement just before the patience runs out resets the counter") {
        PlateauScheduler p(1.0, 12, 0.5);
        p.observe(5.0);
        for (int e = 1; e < 12; ++e) p.observe(5.0);
        CHECK(p.since_improvement() == 11);
        CHECK(p.observe(4.0) == 1.0);
        CHECK(p.since_improvement() == 0);
        for (int e = 0; e < 11; ++e) CHECK(p.observe(4.0) == 1.0);
        CHECK(p.observe(4.0) == 0.5);
    }

    TEST_CASE("step schedule is exact") {
        for (std::size_t e = 0; e < 450; ++e)
            CHECK(step_schedule(3e-4, e, 75) == 3e-4 * std::pow(0.5, std::floor(static_cast<double>(e) / 75.0)));
        CHECK(step_schedule(3e-4, 74, 75) == 3e-4);
        CHECK(step_schedule(3e-4, 75, 75) == 1.5e-4);
        CHECK(step_schedule(3e-4, 449, 75) == 3e-4 / 32.0);
    }
}

TEST_SUITE("normalization") {
    TEST_CASE("statistics come from the given sequences only") {
        auto seqs = small_sequences(6, 3);
        const auto stats = NormStats::fit(ptrs(seqs, 0, 4));
        auto changed = seqs;
        for (std::size_t r = 4; r < 6; ++r)
            for (auto& g : changed[r].graphs) g.node_features.fill(1e6);
        CHECK(NormStats::fit(ptrs(changed, 0, 4)) == stats);

        double mean = 0;
        std::size_t n = 0;
        for (std::size_t r = 0; r < 4; ++r)
            for (const auto& g : seqs[r].graphs)
                for (std::size_t i = 0; i < g.n_nodes(); ++i, ++n) mean += g.node_features.at(i, 2);
        CHECK(stats.mean[2] == doctest::Approx(mean / static_cast<double>(n)).epsilon(1e-12));

        Tensor f = seqs[0].graphs[0].node_features;
        stats.apply(f);
        CHECK(f.at(0, 0) == doctest::Approx((seqs[0].graphs[0].node_features.at(0, 0) - stats.mean[0]) / stats.std[0]));
    }

    TEST_CASE("zero spread falls back to unit scale") {
        auto seqs = small_sequences(1, 4);
        for (auto& g : seqs[0].graphs)
            for (std::size_t i = 0; i < g.n_nodes(); ++i) g.node_features.at(i, 2) = 7.0;
        auto s = NormStats::fit(seqs);
        CHECK(s.std[2] == 1.0);
        CHECK(s.mean[2] == 7.0);
    }
}

TEST_SUITE("train_one") {
    TEST_CASE("identical seeds give bit-identical traces and parameters") {
        auto seqs = small_sequences(5, 5);
        TrainConfig t;
        t.epochs = 4;
        t.batch_size = 2;
        auto a = train_one(ptrs(seqs, 0, 3), ptrs(seqs, 3), small_model(), t, 9);
        auto b = train_one(ptrs(seqs, 0, 3), ptrs(seqs, 3), small_model(), t, 9);
        CHECK(a.trace == b.trace);
        CHECK(loss_trace_csv(a.trace) == loss_trace_csv(b.trace));
        CHECK(a.rng_state == b.rng_state);
        for (const auto& p : a.model.params()) CHECK(b.model.params().get(p->name).value == p->value);
        auto c = train_one(ptrs(seqs, 0, 3), ptrs(seqs, 3), small_model(), t, 10);
        CHECK(c.trace != a.trace);
    }

    TEST_CASE("zero epochs returns the initialization") {
        auto seqs = small_sequences(2, 6);
        TrainConfig t;
        t.epochs = 0;
        auto r = train_one(ptrs(seqs, 0, 1), ptrs(seqs, 1), small_model(), t, 3);
        model::StrataNet fresh(small_model(), derive_seed(3, "init"));
        CHECK(r.trace.empty());
        for (const auto& p : fresh.params()) CHECK(r.model.params().get(p->name).value == p->value);
    }

    TEST_CASE("loss on a fixed batch falls over ten steps") {
        auto seqs = small_sequences(2, 7);
        TrainConfig t;
        t.epochs = 10;
        t.lr = 1e-3;
        auto r = train_one(ptrs(seqs), {}, small_model(), t, 1);
        REQUIRE(r.trace.size() == 10);
        CHECK(r.trace.back().val_mse < r.trace.front().val_mse);
        CHECK(r.trace.back().train_mse < r.trace.front().train_mse);
    }

    TEST_CASE("trace rows carry the scheduled rate") {
        auto seqs = small_sequences(2, 8);
        TrainConfig t;
        t.epochs = 5;
        t.scheduler = Scheduler::Step;
        t.step_period = 2;
        auto r = train_one(ptrs(seqs, 0, 1), ptrs(seqs, 1), small_model(), t, 1);
        for (const auto& e : r.trace) CHECK(e.lr == step_schedule(t.lr, e.epoch, 2));
        CHECK(loss_trace_csv(r.trace).starts_with("epoch,train_mse,val_mse,lr\n"));
    }

    TEST_CASE("alpha values stay inside the unit interval") {
        auto seqs = small_sequences(3, 9);
        TrainConfig t;
        t.epochs = 6;
        t.lr = 0.05;  // large steps push alpha against its bounds
        auto cfg = small_model();
        cfg.alpha0 = 0.95;
        auto r = train_one(ptrs(seqs, 0, 2), ptrs(seqs, 2), cfg, t, 2);
        REQUIRE(r.model.alphas().size() == 2);
        for (double a : r.model.alphas()) {
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
        }
    }

    TEST_CASE("non-finite loss aborts with the last good checkpoint") {
        auto seqs = small_sequences(2, 10);
        seqs[0].targets[0] = std::numeric_limits<double>::infinity();
        TrainConfig t;
        t.epochs = 2;
        try {
            train_one(ptrs(seqs, 0, 1), ptrs(seqs, 1), small_model(), t, 1);
            FAIL("expected divergence");
        } catch (const DivergenceError& e) {
            CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
            CHECK(e.checkpoint().contains("params"));
            CHECK_NOTHROW(checkpoint_from_json(e.checkpoint()));
        }
    }

    TEST_CASE("mismatched sequence shape is rejected") {
        auto seqs = small_sequences(1, 11);
        auto cfg = small_model();
        cfg.m = 3;
        CHECK_THROWS_AS(train_one(ptrs(seqs), {}, cfg, {}, 0), ValidationError);
    }
}

TEST_SUITE("checkpoint") {
    TEST_CASE("round trip reproduces forward outputs bit for bit") {
        auto seqs = small_sequences(3, 12);
        TrainConfig t;
        t.epochs = 2;
        auto r = train_one(ptrs(seqs, 0, 2), ptrs(seqs, 2), small_model(), t, 4);
        auto ck = make_checkpoint(r.model, t, r.norm);
        ck.rng_state = r.rng_state;
        ck.split = data::DatasetSplit{{"a"}, {"b"}, {"c"}, 4};
        const auto path = std::filesystem::temp_directory_path() / "strata_ck_test.json";
        save_checkpoint(path, ck);
        auto back = load_checkpoint(path);
        std::filesystem::remove(path);
        CHECK(back.config == ck.config);
        CHECK(back.train == ck.train);
        CHECK(back.norm == ck.norm);
        CHECK(back.rng_state == ck.rng_state);
        CHECK(back.split->test == std::vector<std::string>{"c"});
        CHECK(back.alpha_values == r.model.alphas());
        auto net = back.restore();
        auto prep = prepare(ptrs(seqs), back.norm, back.config.aggregator);
        auto a = predict(r.model, prep);
        auto b = predict(net, prep);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
        CHECK(to_json(back).dump() == to_json(ck).dump());
    }

    TEST_CASE("loading validates shapes against the configuration") {
        model::StrataNet net(small_model(), 1);
        auto j = to_json(make_checkpoint(net, {}, {}));
        j["params"]["head.out.bias"]["shape"] = {3};
        j["params"]["head.out.bias"]["values"] = {0.0, 0.0, 0.0};
        CHECK_THROWS_WITH_AS(checkpoint_from_json(j), doctest::Contains("head.out.bias"), ValidationError);
        auto j2 = to_json(make_checkpoint(net, {}, {}));
        j2["params"].erase("head.fc1.weight");
        CHECK_THROWS_AS(checkpoint_from_json(j2), ValidationError);
        auto j3 = to_json(make_checkpoint(net, {}, {}));
        j3["format_version"] = 99;
        CHECK_THROWS_AS(checkpoint_from_json(j3), ValidationError);
    }
}

TEST_SUITE("experiment config") {
    TEST_CASE("sections override defaults and fix k and m") {
        auto c = experiment_config_from_json(nlohmann::json::parse(R"({
            "model": {"d": 32, "blocks": 4},
            "train": {"epochs": 7, "scheduler": "step"},
            "data": {"records": "d.jsonl"},
            "graph": {"window": 4, "stride": 2, "shallow": 3, "deep": 6, "haversine": "standard"}
        })"));
        CHECK(c.model.d == 32);
        CHECK(c.model.k == 3);
        CHECK(c.model.m == 6);
        CHECK(c.train.epochs == 7);
        CHECK(c.train.scheduler == Scheduler::Step);
        CHECK(c.graph.partition.window == 4);
        CHECK(c.graph.haversine == graph::HaversineMode::Standard);
        CHECK(c.data.records == "d.jsonl");
        CHECK(c.data.min_layers == 20);
        auto again = experiment_config_from_json(to_json(c));
        CHECK(to_json(again) == to_json(c));
    }

    TEST_CASE("field-level errors") {
        using nlohmann::json;
        CHECK_THROWS_WITH_AS(experiment_config_from_json(json::parse(R"({"train": {"lr": "fast"}})")),
                             doctest::Contains("train.lr"), ValidationError);
        CHECK_THROWS_WITH_AS(experiment_config_from_json(json::parse(R"({"train": {"lr": -1}})")),
                             doctest::Contains("train.lr"), ValidationError);
        CHECK_THROWS_WITH_AS(experiment_config_from_json(json::parse(R"({"modle": {}})")),
                             doctest::Contains("modle"), ValidationError);
        CHECK_THROWS_WITH_AS(experiment_config_from_json(json::parse(R"({"model": {"k": 4}, "graph": {"shallow": 5}})")),
                             doctest::Contains("model.k"), ValidationError);
        CHECK_THROWS_WITH_AS(experiment_config_from_json(json::parse(R"({"graph": {"stride": 9}})")),
                             doctest::Contains("stride"), ValidationError);
        CHECK_THROWS_AS(experiment_config_from_json(json::parse(R"({"train": {"patience": 0}})")), ValidationError);
    }
}
