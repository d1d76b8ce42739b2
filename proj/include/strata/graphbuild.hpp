#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "strata/dataio.hpp"
#include "strata/ops.hpp"
#include "strata/tensor.hpp"

namespace strata::graph {

/// Sliding-window partition of spatially ordered nodes.
struct PartitionSpec {
    std::size_t window = 5;
    std::size_t stride = 3;

    /// Throws ValidationError unless 2 <= window and 1 <= stride < window.
    void validate() const;
    /// Single window over all n nodes: the complete graph.
    static PartitionSpec fully_connected(std::size_t n) { return {n, 1}; }

    friend bool operator==(const PartitionSpec&, const PartitionSpec&) = default;
};

enum class HaversineMode {
    AsPrinted,  // 1 / (2 asin(h)), h without square root
    Standard,   // 1 / (2 asin(sqrt(h)))
};

enum class Aggregation { Mean, WeightedMean };

using Edge = std::pair<std::size_t, std::size_t>;  // first < second

std::vector<std::size_t> window_starts(std::size_t n, const PartitionSpec& spec);
/// Sorted, deduplicated union of all within-window pairs.
std::vector<Edge> build_partitioned_edges(std::size_t n, const PartitionSpec& spec);

/// Inverse haversine-style distance between two points in degrees. The asin
/// argument is clamped to [1e-12, 1].
double edge_weight(double lat_i, double lon_i, double lat_j, double lon_j,
                   HaversineMode mode = HaversineMode::AsPrinted);

/// Node set, coordinates and edges shared by every graph of a sequence.
struct SpatialStructure {
    std::size_t n_nodes = 0;
    PartitionSpec partition;
    std::vector<std::size_t> starts;
    std::vector<Edge> edges;
    std::vector<double> weights;  // parallel to edges
    std::vector<double> lat;
    std::vector<double> lon;

    std::vector<std::vector<std::size_t>> neighbor_lists() const;
    num::NeighborLists aggregation_lists(Aggregation agg) const;
};

std::shared_ptr<const SpatialStructure> build_structure(const std::vector<double>& lat, const std::vector<double>& lon,
                                                        const PartitionSpec& spec,
                                                        HaversineMode mode = HaversineMode::AsPrinted);

struct PartitionedGraph {
    std::shared_ptr<const SpatialStructure> structure;
    num::Tensor node_features;  // n x 3: latitude, longitude, thickness (raw units)

    std::size_t n_nodes() const { return structure->n_nodes; }
    const std::vector<Edge>& edges() const { return structure->edges; }
    const std::vector<double>& edge_weights() const { return structure->weights; }
};

struct TemporalGraphSequence {
    std::string id;
    std::vector<PartitionedGraph> graphs;  // one per shallow layer, top first
    num::Tensor targets;                   // n x m deep-layer thickness in pixels

    std::size_t k() const noexcept { return graphs.size(); }
    std::size_t n_nodes() const { return graphs.front().n_nodes(); }
    std::size_t m() const { return targets.dim(1); }
    const SpatialStructure& structure() const { return *graphs.front().structure; }
};

struct SequenceOptions {
    std::size_t shallow = 5;  // l = k
    std::size_t deep = 15;    // m
    PartitionSpec partition;
    HaversineMode haversine = HaversineMode::AsPrinted;
};

/// Graph t carries shallow layer t; target column j is layer shallow + j.
TemporalGraphSequence build_sequence(const data::ThicknessRecord& rec, const SequenceOptions& opts);
std::vector<TemporalGraphSequence> build_sequences(const std::vector<data::ThicknessRecord>& recs,
                                                   const SequenceOptions& opts);

void save_graph_cache(const std::filesystem::path& path, const TemporalGraphSequence& seq);
TemporalGraphSequence load_graph_cache(const std::filesystem::path& path);

}  // namespace strata::graph
