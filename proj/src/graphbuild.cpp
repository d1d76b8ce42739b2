#include "strata/graphbuild.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"

#include "strata/errors.hpp"

namespace strata::graph {

using nlohmann::json;

void PartitionSpec::validate() const {
    if (window < 2) throw ValidationError("partition window must be at least 2, got " + std::to_string(window));
    if (stride < 1 || stride >= window) {
        throw ValidationError("partition stride must satisfy 1 <= stride < window, got stride=" + std::to_string(stride) +
                              " window=" + std::to_string(window));
    }
}

std::vector<std::size_t> window_starts(std::size_t n, const PartitionSpec& spec) {
    spec.validate();
    if (n < spec.window) {
        throw ValidationError("cannot partition " + std::to_string(n) + " nodes with window " + std::to_string(spec.window));
    }
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + spec.window <= n; s += spec.stride) starts.push_back(s);
    // Tail anchor so the last node is always covered.
    if (starts.back() + spec.window < n) starts.push_back(n - spec.window);
    return starts;
}

std::vector<Edge> build_partitioned_edges(std::size_t n, const PartitionSpec& spec) {
    std::vector<Edge> edges;
    for (auto s : window_starts(n, spec)) {
        for (std::size_t i = s; i < s + spec.window; ++i)
            for (std::size_t j = i + 1; j < s + spec.window; ++j) edges.emplace_back(i, j);
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

double edge_weight(double lat_i, double lon_i, double lat_j, double lon_j, HaversineMode mode) {
    constexpr double deg = std::numbers::pi / 180.0;
    const auto hav = [](double theta) {
        const double s = std::sin(theta / 2.0);
        return s * s;
    };
    const double phi_i = lat_i * deg, phi_j = lat_j * deg;
    double h = hav(phi_j - phi_i) + std::cos(phi_i) * std::cos(phi_j) * hav((lon_j - lon_i) * deg);
    if (mode == HaversineMode::Standard) h = std::sqrt(h);
    return 1.0 / (2.0 * std::asin(std::clamp(h, 1e-12, 1.0)));
}

std::vector<std::vector<std::size_t>> SpatialStructure::neighbor_lists() const {
    std::vector<std::vector<std::size_t>> out(n_nodes);
    for (const auto& [i, j] : edges) {
        out[i].push_back(j);
        out[j].push_back(i);
    }
    for (auto& l : out) std::sort(l.begin(), l.end());
    return out;
}

num::NeighborLists SpatialStructure::aggregation_lists(Aggregation agg) const {
    if (agg == Aggregation::Mean) return num::NeighborLists::mean(neighbor_lists());
    std::vector<std::vector<std::pair<std::size_t, double>>> adj(n_nodes);
    for (std::size_t e = 0; e < edges.size(); ++e) {
        adj[edges[e].first].emplace_back(edges[e].second, weights[e]);
        adj[edges[e].second].emplace_back(edges[e].first, weights[e]);
    }
    std::vector<std::vector<std::size_t>> lists(n_nodes);
    std::vector<std::vector<double>> w(n_nodes);
    for (std::size_t i = 0; i < n_nodes; ++i) {
        std::sort(adj[i].begin(), adj[i].end());
        for (const auto& [j, wt] : adj[i]) {
            lists[i].push_back(j);
            w[i].push_back(wt);
        }
    }
    return num::NeighborLists::weighted_mean(lists, w);
}

std::shared_ptr<const SpatialStructure> build_structure(const std::vector<double>& lat, const std::vector<double>& lon,
                                                        const PartitionSpec& spec, HaversineMode mode) {
    if (lat.size() != lon.size()) throw ValidationError("latitude/longitude length mismatch");
    auto s = std::make_shared<SpatialStructure>();
    s->n_nodes = lat.size();
    s->partition = spec;
    s->starts = window_starts(s->n_nodes, spec);
    s->edges = build_partitioned_edges(s->n_nodes, spec);
    s->lat = lat;
    s->lon = lon;
    s->weights.reserve(s->edges.size());
    for (const auto& [i, j] : s->edges) s->weights.push_back(edge_weight(lat[i], lon[i], lat[j], lon[j], mode));
    return s;
}

TemporalGraphSequence build_sequence(const data::ThicknessRecord& rec, const SequenceOptions& opts) {
    if (opts.shallow < 1 || opts.deep < 1) throw ValidationError("need at least one shallow and one deep layer");
    const std::size_t need = opts.shallow + opts.deep;
    if (rec.layer_count() < need) {
        throw ValidationError("record '" + rec.id + "' has " + std::to_string(rec.layer_count()) + " layers, need " +
                              std::to_string(need));
    }
    const std::size_t n = rec.width;
    auto structure = build_structure(rec.lat, rec.lon, opts.partition, opts.haversine);

    TemporalGraphSequence seq;
    seq.id = rec.id;
    for (std::size_t t = 0; t < opts.shallow; ++t) {
        const auto thick = rec.layer_values(t);
        num::Tensor f({n, 3});
        for (std::size_t i = 0; i < n; ++i) {
            f.at(i, 0) = rec.lat[i];
            f.at(i, 1) = rec.lon[i];
            f.at(i, 2) = thick[i];
        }
        seq.graphs.push_back({structure, std::move(f)});
    }
    seq.targets = num::Tensor({n, opts.deep});
    for (std::size_t j = 0; j < opts.deep; ++j) {
        const auto vals = rec.layer_values(opts.shallow + j);
        for (std::size_t i = 0; i < n; ++i) {
            if (!(vals[i] > 0.0)) {
                throw ValidationError("record '" + rec.id + "': non-positive target thickness at column " + std::to_string(i));
            }
            seq.targets.at(i, j) = vals[i];
        }
    }
    return seq;
}

std::vector<TemporalGraphSequence> build_sequences(const std::vector<data::ThicknessRecord>& recs,
                                                   const SequenceOptions& opts) {
    std::vector<TemporalGraphSequence> out;
    out.reserve(recs.size());
    for (const auto& r : recs) out.push_back(build_sequence(r, opts));
    return out;
}

void save_graph_cache(const std::filesystem::path& path, const TemporalGraphSequence& seq) {
    const auto& s = seq.structure();
    json edges = json::array();
    for (const auto& [i, j] : s.edges) edges.push_back({i, j});
    json features = json::array();
    for (const auto& g : seq.graphs) {
        json layer = json::array();
        for (std::size_t i = 0; i < g.n_nodes(); ++i)
            layer.push_back({g.node_features.at(i, 0), g.node_features.at(i, 1), g.node_features.at(i, 2)});
        features.push_back(std::move(layer));
    }
    json targets = json::array();
    for (std::size_t i = 0; i < seq.n_nodes(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < seq.m(); ++j) row.push_back(seq.targets.at(i, j));
        targets.push_back(std::move(row));
    }
    json doc{{"id", seq.id},
             {"window", s.partition.window},
             {"stride", s.partition.stride},
             {"starts", s.starts},
             {"edges", std::move(edges)},
             {"weights", s.weights},
             {"features_by_layer", std::move(features)},
             {"targets", std::move(targets)}};
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << doc.dump() << '\n';
}

TemporalGraphSequence load_graph_cache(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    json doc;
    try {
        doc = json::parse(in);
        auto s = std::make_shared<SpatialStructure>();
        s->partition = {doc.at("window").get<std::size_t>(), doc.at("stride").get<std::size_t>()};
        s->starts = doc.at("starts").get<std::vector<std::size_t>>();
        for (const auto& e : doc.at("edges")) s->edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
        s->weights = doc.at("weights").get<std::vector<double>>();
        const auto& layers = doc.at("features_by_layer");
        if (layers.empty()) throw ValidationError(path.string() + ": no feature layers");
        s->n_nodes = layers.at(0).size();
        for (const auto& row : layers.at(0)) {
            s->lat.push_back(row.at(0).get<double>());
            s->lon.push_back(row.at(1).get<double>());
        }
        if (s->weights.size() != s->edges.size()) throw ValidationError(path.string() + ": edge/weight count mismatch");
        for (const auto& [i, j] : s->edges) {
            if (i >= j || j >= s->n_nodes) throw ValidationError(path.string() + ": invalid edge");
        }
        TemporalGraphSequence seq;
        seq.id = doc.at("id").get<std::string>();
        for (const auto& layer : layers) {
            if (layer.size() != s->n_nodes) throw ValidationError(path.string() + ": inconsistent node count");
            num::Tensor f({s->n_nodes, 3});
            for (std::size_t i = 0; i < s->n_nodes; ++i)
                for (std::size_t c = 0; c < 3; ++c) f.at(i, c) = layer.at(i).at(c).get<double>();
            seq.graphs.push_back({s, std::move(f)});
        }
        const auto& targets = doc.at("targets");
        if (targets.size() != s->n_nodes || targets.empty()) throw ValidationError(path.string() + ": target rows mismatch");
        const std::size_t m = targets.at(0).size();
        seq.targets = num::Tensor({s->n_nodes, m});
        for (std::size_t i = 0; i < s->n_nodes; ++i) {
            if (targets.at(i).size() != m) throw ValidationError(path.string() + ": ragged targets");
            for (std::size_t j = 0; j < m; ++j) seq.targets.at(i, j) = targets.at(i).at(j).get<double>();
        }
        return seq;
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    } catch (const num::DimensionError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

}  // namespace strata::graph
