#pragma once

// Exact min-cost max-flow and the performance metrics built on it. Real
// capacities and costs are scaled to integers at 1e-6 resolution, so the
// solver works in exact int64 arithmetic. Undirected design edges become
// opposed arc pairs; the per-edge net flow is the signed difference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include "resgen/errors.hpp"
#include "resgen/graph.hpp"

namespace resgen {

struct FlowNetwork {
    struct Arc {
        int from = 0;
        int to = 0;
        double capacity = 0.0;
        double unit_cost = 0.0;
        int design_edge = -1;  // index into the source graph's edge list, -1 for dummies
        int design_dir = 0;    // +1 aligned with stored (u,v), -1 reversed, 0 dummy
    };

    std::size_t node_count = 0;
    int source = -1;
    int sink = -1;
    std::vector<Arc> arcs;

    void add_arc(int from, int to, double capacity, double unit_cost,
                 int design_edge = -1, int design_dir = 0) {
        arcs.push_back({from, to, capacity, unit_cost, design_edge, design_dir});
    }
};

struct FlowResult {
    double f_max = 0.0;
    double total_cost = 0.0;
    std::vector<double> arc_flows;       // parallel to FlowNetwork::arcs
    std::vector<double> edge_net_flows;  // per design edge, signed (+ = stored u->v)
    std::vector<char> source_side;       // min-cut: residual-reachable from source
};

/// Adds a super-source feeding Supply nodes and a super-sink drawn from
/// Demand nodes (zero cost, capacity = node magnitude); interior edges become
/// opposed arc pairs. Source id = n, sink id = n + 1.
inline FlowNetwork augment_source_sink(const DesignGraph& g) {
    const std::size_t n = g.nodes.size();
    bool any_supply = false, any_demand = false;
    FlowNetwork net;
    net.node_count = n + 2;
    net.source = static_cast<int>(n);
    net.sink = static_cast<int>(n + 1);
    for (const auto& node : g.nodes) {
        if (node.node_class.index == profiles::kSupply) {
            net.add_arc(net.source, node.id, node.magnitude, 0.0);
            any_supply = true;
        } else if (node.node_class.index == profiles::kDemand) {
            net.add_arc(node.id, net.sink, node.magnitude, 0.0);
            any_demand = true;
        }
    }
    if (!any_supply) throw DegenerateNetworkError("network has no supply nodes");
    if (!any_demand) throw DegenerateNetworkError("network has no demand nodes");
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        const auto& e = g.edges[k];
        net.add_arc(e.u, e.v, e.capacity, e.unit_cost, static_cast<int>(k), +1);
        net.add_arc(e.v, e.u, e.capacity, e.unit_cost, static_cast<int>(k), -1);
    }
    return net;
}

namespace detail {

constexpr double kFlowScale = 1e6;
constexpr std::int64_t kInfFlow = std::numeric_limits<std::int64_t>::max() / 4;

inline std::int64_t scale_flow_value(double x, const char* what) {
    if (!std::isfinite(x)) throw DomainError(std::string("flow: non-finite ") + what);
    double scaled = std::round(x * kFlowScale);
    if (std::fabs(scaled) > 9e15) throw DomainError(std::string("flow: ") + what + " too large");
    return static_cast<std::int64_t>(scaled);
}

}  // namespace detail

/// Successive shortest augmenting paths with node potentials (Bellman-Ford
/// bootstrap, Dijkstra thereafter). Among all maximum flows the returned one
/// has minimum total cost. Unreachable sink gives f_max = 0.
inline FlowResult min_cost_max_flow(const FlowNetwork& net) {
    const int n = static_cast<int>(net.node_count);
    if (net.source < 0 || net.sink < 0 || net.source >= n || net.sink >= n)
        throw ConfigError("flow: source/sink out of range");
    if (net.source == net.sink) throw ConfigError("flow: source equals sink");

    struct InternalArc {
        int to;
        std::int64_t cap;
        std::int64_t cost;
        int rev;
    };
    std::vector<InternalArc> arcs;
    std::vector<std::vector<int>> adj(net.node_count);
    arcs.reserve(net.arcs.size() * 2);
    std::vector<int> fwd_index(net.arcs.size());
    for (std::size_t i = 0; i < net.arcs.size(); ++i) {
        const auto& a = net.arcs[i];
        if (a.from < 0 || a.from >= n || a.to < 0 || a.to >= n)
            throw ConfigError("flow: arc endpoint out of range");
        if (a.capacity < 0.0) throw DomainError("flow: negative capacity");
        std::int64_t cap = detail::scale_flow_value(a.capacity, "capacity");
        std::int64_t cost = detail::scale_flow_value(a.unit_cost, "cost");
        fwd_index[i] = static_cast<int>(arcs.size());
        adj[a.from].push_back(static_cast<int>(arcs.size()));
        arcs.push_back({a.to, cap, cost, static_cast<int>(arcs.size() + 1)});
        adj[a.to].push_back(static_cast<int>(arcs.size()));
        arcs.push_back({a.from, 0, -cost, static_cast<int>(arcs.size() - 1)});
    }

    // Bellman-Ford over the zero-flow residual establishes valid potentials
    // even if some arc costs are negative.
    std::vector<std::int64_t> potential(net.node_count, detail::kInfFlow);
    potential[net.source] = 0;
    for (int round = 0; round < n; ++round) {
        bool changed = false;
        for (int u = 0; u < n; ++u) {
            if (potential[u] >= detail::kInfFlow) continue;
            for (int ai : adj[u]) {
                const auto& a = arcs[ai];
                if (a.cap > 0 && potential[u] + a.cost < potential[a.to]) {
                    potential[a.to] = potential[u] + a.cost;
                    changed = true;
                }
            }
        }
        if (!changed) break;
    }
    for (auto& p : potential)
        if (p >= detail::kInfFlow) p = 0;  // unreachable: any value works

    std::vector<std::int64_t> dist(net.node_count);
    std::vector<int> prev_arc(net.node_count);
    std::int64_t total_flow = 0;
    __int128 total_cost = 0;

    for (;;) {
        std::fill(dist.begin(), dist.end(), detail::kInfFlow);
        std::fill(prev_arc.begin(), prev_arc.end(), -1);
        dist[net.source] = 0;
        using HeapItem = std::pair<std::int64_t, int>;
        std::priority_queue<HeapItem, std::vector<HeapItem>, std::greater<>> heap;
        heap.push({0, net.source});
        while (!heap.empty()) {
            auto [d, u] = heap.top();
            heap.pop();
            if (d > dist[u]) continue;
            for (int ai : adj[u]) {
                const auto& a = arcs[ai];
                if (a.cap <= 0) continue;
                std::int64_t nd = d + a.cost + potential[u] - potential[a.to];
                if (nd < dist[a.to]) {
                    dist[a.to] = nd;
                    prev_arc[a.to] = ai;
                    heap.push({nd, a.to});
                }
            }
        }
        if (dist[net.sink] >= detail::kInfFlow) break;
        for (std::size_t v = 0; v < net.node_count; ++v)
            potential[v] += std::min(dist[v], dist[net.sink]);

        std::int64_t push = detail::kInfFlow;
        for (int v = net.sink; v != net.source;) {
            int ai = prev_arc[v];
            push = std::min(push, arcs[ai].cap);
            v = arcs[arcs[ai].rev].to;
        }
        for (int v = net.sink; v != net.source;) {
            int ai = prev_arc[v];
            arcs[ai].cap -= push;
            arcs[arcs[ai].rev].cap += push;
            total_cost += static_cast<__int128>(push) * arcs[ai].cost;
            v = arcs[arcs[ai].rev].to;
        }
        total_flow += push;
    }

    FlowResult res;
    res.f_max = static_cast<double>(total_flow) / detail::kFlowScale;
    res.total_cost = static_cast<double>(total_cost) / (detail::kFlowScale * detail::kFlowScale);
    res.arc_flows.resize(net.arcs.size());
    int max_edge = -1;
    for (std::size_t i = 0; i < net.arcs.size(); ++i) {
        // flow on arc i = residual capacity of its reverse arc
        std::int64_t f = arcs[fwd_index[i] + 1].cap;
        res.arc_flows[i] = static_cast<double>(f) / detail::kFlowScale;
        max_edge = std::max(max_edge, net.arcs[i].design_edge);
    }
    res.edge_net_flows.assign(static_cast<std::size_t>(max_edge + 1), 0.0);
    for (std::size_t i = 0; i < net.arcs.size(); ++i) {
        const auto& a = net.arcs[i];
        if (a.design_edge >= 0)
            res.edge_net_flows[a.design_edge] += a.design_dir * res.arc_flows[i];
    }

    res.source_side.assign(net.node_count, 0);
    std::vector<int> stack{net.source};
    res.source_side[net.source] = 1;
    while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        for (int ai : adj[u]) {
            const auto& a = arcs[ai];
            if (a.cap > 0 && !res.source_side[a.to]) {
                res.source_side[a.to] = 1;
                stack.push_back(a.to);
            }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Performance metrics
// ---------------------------------------------------------------------------

/// Total used fraction of installed capacity over interior edges, in [0,1].
inline double capacity_ratio(const DesignGraph& g, const FlowResult& flows) {
    if (g.edges.empty()) throw MetricError("capacity_ratio: graph has no edges");
    if (flows.edge_net_flows.size() != g.edges.size())
        throw ShapeError("capacity_ratio: flow result does not match graph edges");
    double used = 0.0, installed = 0.0;
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        used += std::fabs(flows.edge_net_flows[k]);
        installed += g.edges[k].capacity;
    }
    return used / installed;
}

/// Total installed-capacity cost at unit price a.
inline double edge_cost(const DesignGraph& g, double a) {
    if (!(a > 0.0)) throw DomainError("edge_cost: unit price must be positive");
    double total = 0.0;
    for (const auto& e : g.edges) total += a * e.capacity;
    return total;
}

/// Q = alpha * C^R + (1 - alpha) * C^E / K. Lower is better for this form.
inline double combined_label(double cr, double ce, double alpha, double k) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("combined_label: alpha outside [0,1]");
    if (!(k > 0.0)) throw DomainError("combined_label: K must be positive");
    return alpha * cr + (1.0 - alpha) * ce / k;
}

/// Q for the synthetic corpus: the min-cost maximum flow magnitude. Higher is
/// better for this form.
inline double synthetic_label(const DesignGraph& g) {
    return min_cost_max_flow(augment_source_sink(g)).f_max;
}

/// Commodity actually delivered to demand nodes.
inline double delivered_demand(const DesignGraph& g) {
    return min_cost_max_flow(augment_source_sink(g)).f_max;
}

}  // namespace resgen
