#pragma once

// Post-processing evaluation: meshgrid mapping of a design onto the unit
// square, distance-decayed component failures around a sampled epicenter,
// lost-demand computation through the flow oracle, EDNS (Monte Carlo and
// exact enumeration), recovery curves, and the resilience ratio.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "resgen/errors.hpp"
#include "resgen/flow.hpp"
#include "resgen/graph.hpp"
#include "resgen/matrix.hpp"
#include "resgen/rng.hpp"

namespace resgen {

struct MeshGrid {
    std::size_t cells_per_side = 8;

    void validate() const {
        if (cells_per_side < 1) throw ConfigError("meshgrid: need >= 1 cell per side");
    }
};

struct Cell {
    int row = 0;
    int col = 0;
    bool operator==(const Cell&) const = default;
};

inline Cell cell_of(double x, double y, const MeshGrid& grid) {
    grid.validate();
    const int g = static_cast<int>(grid.cells_per_side);
    auto clamp_cell = [g](double v) {
        int c = static_cast<int>(std::floor(v * g));
        return std::min(std::max(c, 0), g - 1);
    };
    return {clamp_cell(y), clamp_cell(x)};
}

struct GridAssignment {
    std::vector<Cell> node_cells;
    std::vector<Cell> edge_cells;  // cell of each edge's midpoint
};

inline GridAssignment map_to_grid(const DesignGraph& g, const MeshGrid& grid) {
    GridAssignment asg;
    asg.node_cells.reserve(g.nodes.size());
    for (const auto& node : g.nodes) asg.node_cells.push_back(cell_of(node.x, node.y, grid));
    asg.edge_cells.reserve(g.edges.size());
    for (const auto& e : g.edges) {
        const auto& a = g.nodes[e.u];
        const auto& b = g.nodes[e.v];
        asg.edge_cells.push_back(cell_of(0.5 * (a.x + b.x), 0.5 * (a.y + b.y), grid));
    }
    return asg;
}

struct DisruptionEvent {
    MeshGrid grid;
    Cell epicenter;
    double probability = 1.0;  // P_e, used by exact event lists
    double p0 = 0.9;           // failure probability at the epicenter cell
    double gamma = 0.5;        // geometric decay per cell of Chebyshev distance

    void validate() const {
        grid.validate();
        int g = static_cast<int>(grid.cells_per_side);
        if (epicenter.row < 0 || epicenter.row >= g || epicenter.col < 0 ||
            epicenter.col >= g)
            throw ConfigError("disruption event: epicenter outside the grid");
        if (!(probability > 0.0 && probability <= 1.0))
            throw ConfigError("disruption event: probability outside (0,1]");
        if (!(p0 > 0.0 && p0 <= 1.0)) throw ConfigError("disruption event: p0 outside (0,1]");
        if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("disruption event: gamma outside (0,1)");
    }
};

inline double failure_prob(const DisruptionEvent& event, const Cell& cell) {
    int dist = std::max(std::abs(cell.row - event.epicenter.row),
                        std::abs(cell.col - event.epicenter.col));
    double p = event.p0 * std::pow(event.gamma, static_cast<double>(dist));
    return std::min(std::max(p, 0.0), 1.0);
}

/// p_fail for every cell in an assignment, nodes first then edges.
inline std::vector<double> failure_probs(const DisruptionEvent& event,
                                         const GridAssignment& cells) {
    event.validate();
    std::vector<double> probs;
    probs.reserve(cells.node_cells.size() + cells.edge_cells.size());
    for (const auto& c : cells.node_cells) probs.push_back(failure_prob(event, c));
    for (const auto& c : cells.edge_cells) probs.push_back(failure_prob(event, c));
    return probs;
}

struct EventOutcome {
    std::vector<int> failed_nodes;  // node ids
    std::vector<int> failed_edges;  // indices into graph.edges (independent failures)
    double lost_demand = 0.0;       // C_e
};

/// Removes failed nodes (with their incident edges) and failed edges,
/// relabeling ids consecutively.
inline DesignGraph remove_failures(const DesignGraph& g,
                                   const std::vector<int>& failed_nodes,
                                   const std::vector<int>& failed_edges) {
    std::vector<char> node_dead(g.nodes.size(), 0), edge_dead(g.edges.size(), 0);
    for (int v : failed_nodes) node_dead.at(v) = 1;
    for (int e : failed_edges) edge_dead.at(e) = 1;

    DesignGraph out;
    out.profile_id = g.profile_id;
    std::vector<int> remap(g.nodes.size(), -1);
    int next_id = 0;
    for (const auto& node : g.nodes) {
        if (node_dead[node.id]) continue;
        NodeAttr copy = node;
        copy.id = next_id;
        remap[node.id] = next_id++;
        out.nodes.push_back(copy);
    }
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        const auto& e = g.edges[k];
        if (edge_dead[k] || node_dead[e.u] || node_dead[e.v]) continue;
        EdgeAttr copy = e;
        copy.u = remap[e.u];
        copy.v = remap[e.v];
        out.edges.push_back(copy);
    }
    return out;
}

/// Delivered demand, with degenerate post-event networks (no supply or no
/// demand left) counting as zero delivery.
inline double delivered_or_zero(const DesignGraph& g) {
    if (g.nodes.empty()) return 0.0;
    try {
        return delivered_demand(g);
    } catch (const DegenerateNetworkError&) {
        return 0.0;
    }
}

/// Independent Bernoulli failures per component (nodes in id order, then
/// edges in index order), then one flow re-solve for the lost demand.
inline EventOutcome apply_event(const DesignGraph& g, const DisruptionEvent& event,
                                std::uint64_t seed) {
    event.validate();
    GridAssignment cells = map_to_grid(g, event.grid);
    Rng rng(derive_seed(seed, 0xe7e7u));
    EventOutcome out;
    for (const auto& node : g.nodes)
        if (rng.uniform() < failure_prob(event, cells.node_cells[node.id]))
            out.failed_nodes.push_back(node.id);
    for (std::size_t k = 0; k < g.edges.size(); ++k)
        if (rng.uniform() < failure_prob(event, cells.edge_cells[k]))
            out.failed_edges.push_back(static_cast<int>(k));

    double nominal = delivered_or_zero(g);
    double damaged = delivered_or_zero(remove_failures(g, out.failed_nodes, out.failed_edges));
    out.lost_demand = nominal - damaged;
    return out;
}

// ---------------------------------------------------------------------------
// EDNS
// ---------------------------------------------------------------------------

struct WeightedEvent {
    double probability = 0.0;
    double lost_demand = 0.0;
};

/// Eq.-style finite sum over an explicit event list.
inline double edns_exact(const std::vector<WeightedEvent>& events) {
    double total = 0.0;
    for (const auto& e : events) total += e.probability * e.lost_demand;
    return total;
}

struct EdnsConfig {
    MeshGrid grid{8};
    double p0 = 0.9;
    double gamma = 0.5;
    std::size_t n_samples = 200;
    std::uint64_t seed = 0;
    Matrix cell_weights;  // optional grid-sized weights; empty = uniform epicenters

    void validate() const {
        grid.validate();
        if (n_samples < 1) throw ConfigError("edns: need >= 1 sample");
        if (cell_weights.rows() != 0 &&
            (cell_weights.rows() != grid.cells_per_side ||
             cell_weights.cols() != grid.cells_per_side))
            throw ConfigError("edns: cell weight map does not match the grid");
    }
};

struct EventRecord {
    std::size_t sample = 0;
    Cell epicenter;
    EventOutcome outcome;
};

struct EdnsEstimate {
    double edns = 0.0;
    double std_error = 0.0;
    std::vector<EventRecord> records;
};

namespace detail {

inline Cell draw_epicenter(const EdnsConfig& cfg, Rng& rng) {
    const std::size_t g = cfg.grid.cells_per_side;
    if (cfg.cell_weights.rows() == 0) {
        std::size_t flat = rng.uniform_int(g * g);
        return {static_cast<int>(flat / g), static_cast<int>(flat % g)};
    }
    double total = 0.0;
    for (double w : cfg.cell_weights.data()) total += w;
    if (!(total > 0.0)) throw ConfigError("edns: cell weights sum to zero");
    double r = rng.uniform() * total;
    for (std::size_t i = 0; i < g; ++i)
        for (std::size_t j = 0; j < g; ++j) {
            r -= cfg.cell_weights(i, j);
            if (r <= 0.0) return {static_cast<int>(i), static_cast<int>(j)};
        }
    return {static_cast<int>(g - 1), static_cast<int>(g - 1)};
}

}  // namespace detail

/// Monte Carlo EDNS: epicenters drawn i.i.d. over the grid, one event per
/// sample with a derived seed, EDNS = mean lost demand with its standard
/// error. Fully determined by (graph, config).
inline EdnsEstimate edns(const DesignGraph& g, const EdnsConfig& cfg) {
    cfg.validate();
    EdnsEstimate est;
    est.records.reserve(cfg.n_samples);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t s = 0; s < cfg.n_samples; ++s) {
        std::uint64_t sample_seed = derive_seed(cfg.seed, 0xed05u, s);
        Rng rng(sample_seed);
        DisruptionEvent event;
        event.grid = cfg.grid;
        event.epicenter = detail::draw_epicenter(cfg, rng);
        event.p0 = cfg.p0;
        event.gamma = cfg.gamma;
        EventOutcome outcome = apply_event(g, event, derive_seed(sample_seed, 0x0a1u));
        sum += outcome.lost_demand;
        sum_sq += outcome.lost_demand * outcome.lost_demand;
        est.records.push_back({s, event.epicenter, std::move(outcome)});
    }
    const double n = static_cast<double>(cfg.n_samples);
    est.edns = sum / n;
    if (cfg.n_samples > 1) {
        double var = (sum_sq - sum * sum / n) / (n - 1.0);
        est.std_error = std::sqrt(std::max(var, 0.0) / n);
    }
    return est;
}

/// Exact E[C_e] for a fixed epicenter by enumerating every subset of
/// component failures. Component count (nodes + edges) is capped at 20.
inline double expected_lost_demand_exact(const DesignGraph& g, const DisruptionEvent& event) {
    event.validate();
    const std::size_t n_comp = g.nodes.size() + g.edges.size();
    if (n_comp > 20)
        throw DomainError("exact enumeration supports at most 20 components");
    GridAssignment cells = map_to_grid(g, event.grid);
    std::vector<double> probs = failure_probs(event, cells);
    double nominal = delivered_or_zero(g);

    double expectation = 0.0;
    for (std::uint64_t mask = 0; mask < (1ull << n_comp); ++mask) {
        double p = 1.0;
        std::vector<int> failed_nodes, failed_edges;
        for (std::size_t c = 0; c < n_comp; ++c) {
            bool failed = (mask >> c) & 1ull;
            p *= failed ? probs[c] : 1.0 - probs[c];
            if (failed) {
                if (c < g.nodes.size())
                    failed_nodes.push_back(static_cast<int>(c));
                else
                    failed_edges.push_back(static_cast<int>(c - g.nodes.size()));
            }
        }
        if (p == 0.0) continue;
        double damaged = delivered_or_zero(remove_failures(g, failed_nodes, failed_edges));
        expectation += p * (nominal - damaged);
    }
    return expectation;
}

/// Exact EDNS under the sampling model: the epicenter-cell average of the
/// per-event exact expectations (uniform cells unless weighted).
inline double edns_exact_enumeration(const DesignGraph& g, const EdnsConfig& cfg) {
    cfg.validate();
    const std::size_t side = cfg.grid.cells_per_side;
    double total = 0.0, weight_total = 0.0;
    for (std::size_t i = 0; i < side; ++i)
        for (std::size_t j = 0; j < side; ++j) {
            double w = cfg.cell_weights.rows() == 0 ? 1.0 : cfg.cell_weights(i, j);
            if (w <= 0.0) continue;
            DisruptionEvent event;
            event.grid = cfg.grid;
            event.epicenter = {static_cast<int>(i), static_cast<int>(j)};
            event.p0 = cfg.p0;
            event.gamma = cfg.gamma;
            total += w * expected_lost_demand_exact(g, event);
            weight_total += w;
        }
    if (!(weight_total > 0.0)) throw ConfigError("edns: no cells with positive weight");
    return total / weight_total;
}

// ---------------------------------------------------------------------------
// Recovery and the resilience ratio
// ---------------------------------------------------------------------------

struct PerformanceCurve {
    std::vector<double> times;
    std::vector<double> values;

    void validate() const {
        if (times.size() != values.size() || times.size() < 2)
            throw MetricError("performance curve: need >= 2 aligned samples");
        if (!(times.front() < times.back()))
            throw MetricError("performance curve: time span must be positive");
    }
};

inline double trapezoid_area(const PerformanceCurve& c) {
    c.validate();
    double area = 0.0;
    for (std::size_t i = 0; i + 1 < c.times.size(); ++i)
        area += 0.5 * (c.values[i] + c.values[i + 1]) * (c.times[i + 1] - c.times[i]);
    return area;
}

/// Phi = area under the resilience curve / area under the nominal curve.
inline double resilience_ratio(const PerformanceCurve& resilience,
                               const PerformanceCurve& nominal) {
    resilience.validate();
    nominal.validate();
    if (resilience.times != nominal.times)
        throw MetricError("resilience_ratio: curves must share the time grid");
    double denom = trapezoid_area(nominal);
    if (!(denom > 0.0)) throw MetricError("resilience_ratio: zero nominal integral");
    return trapezoid_area(resilience) / denom;
}

enum class RecoveryPolicy { kRandom, kLargestDemandFirst };

/// One component restored per unit time step; performance is the delivered
/// demand after each restoration, ending at the nominal value. The
/// largest-demand-first policy repairs by magnitude (edges take the larger
/// endpoint magnitude), ties broken by component id.
inline PerformanceCurve recovery_curve(const DesignGraph& g, const EventOutcome& outcome,
                                       RecoveryPolicy policy, std::uint64_t seed) {
    struct Component {
        bool is_node;
        int id;          // node id or edge index
        double priority;
    };
    std::vector<Component> pending;
    for (int v : outcome.failed_nodes)
        pending.push_back({true, v, g.nodes.at(v).magnitude});
    for (int e : outcome.failed_edges) {
        const auto& edge = g.edges.at(e);
        pending.push_back({false, e,
                           std::max(g.nodes[edge.u].magnitude, g.nodes[edge.v].magnitude)});
    }

    if (policy == RecoveryPolicy::kRandom) {
        Rng rng(derive_seed(seed, 0x4ec0u));
        rng.shuffle(pending);
    } else {
        std::stable_sort(pending.begin(), pending.end(),
                         [](const Component& a, const Component& b) {
                             if (a.priority != b.priority) return a.priority > b.priority;
                             if (a.is_node != b.is_node) return a.is_node;
                             return a.id < b.id;
                         });
    }

    double nominal = delivered_or_zero(g);
    PerformanceCurve curve;
    if (pending.empty()) {
        curve.times = {0.0, 1.0};
        curve.values = {nominal, nominal};
        return curve;
    }

    std::vector<int> dead_nodes = outcome.failed_nodes;
    std::vector<int> dead_edges = outcome.failed_edges;
    auto remove_value = [](std::vector<int>& v, int x) {
        v.erase(std::remove(v.begin(), v.end(), x), v.end());
    };

    curve.times.push_back(0.0);
    curve.values.push_back(delivered_or_zero(remove_failures(g, dead_nodes, dead_edges)));
    for (std::size_t step = 0; step < pending.size(); ++step) {
        const Component& c = pending[step];
        if (c.is_node)
            remove_value(dead_nodes, c.id);
        else
            remove_value(dead_edges, c.id);
        curve.times.push_back(static_cast<double>(step + 1));
        curve.values.push_back(
            delivered_or_zero(remove_failures(g, dead_nodes, dead_edges)));
    }
    return curve;
}

/// Constant nominal-performance curve on the same grid as a recovery curve.
inline PerformanceCurve nominal_curve(const DesignGraph& g, const PerformanceCurve& like) {
    like.validate();
    PerformanceCurve out;
    out.times = like.times;
    out.values.assign(like.times.size(), delivered_or_zero(g));
    return out;
}

}  // namespace resgen
