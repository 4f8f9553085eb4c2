#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "resgen/flow.hpp"
#include "resgen/rng.hpp"
#include "resgen/synthgen.hpp"

using namespace resgen;

namespace {

// Independent oracle: enumerate all integer net flows on interior edges.
// Boundary arc flows are implied by node balances, so feasibility reduces to
// per-node interval checks. Returns {f_max, min cost at f_max}.
struct OracleResult {
    long long f_max = 0;
    long long cost = 0;
};

OracleResult enumerate_flows(const DesignGraph& g) {
    const int n = g.node_count();
    const int m = g.edge_count();
    std::vector<long long> best{-1, 0};  // {flow, cost}

    std::vector<long long> flow(m, 0);
    std::function<void(int)> walk = [&](int k) {
        if (k == m) {
            // Net outflow of v through interior edges.
            std::vector<long long> net(n, 0);
            for (int e = 0; e < m; ++e) {
                net[g.edges[e].u] += flow[e];
                net[g.edges[e].v] -= flow[e];
            }
            long long delivered = 0;
            for (int v = 0; v < n; ++v) {
                long long mag = static_cast<long long>(g.nodes[v].magnitude);
                switch (g.nodes[v].node_class.index) {
                    case profiles::kSupply:
                        // Source arc must carry net[v] within [0, mag].
                        if (net[v] < 0 || net[v] > mag) return;
                        break;
                    case profiles::kDemand:
                        if (net[v] > 0 || -net[v] > mag) return;
                        delivered += -net[v];
                        break;
                    default:
                        if (net[v] != 0) return;
                }
            }
            long long cost = 0;
            for (int e = 0; e < m; ++e)
                cost += std::llabs(flow[e]) * static_cast<long long>(g.edges[e].unit_cost);
            if (delivered > best[0] || (delivered == best[0] && cost < best[1]))
                best = {delivered, cost};
            return;
        }
        long long cap = static_cast<long long>(g.edges[k].capacity);
        for (long long f = -cap; f <= cap; ++f) {
            flow[k] = f;
            walk(k + 1);
        }
    };
    walk(0);
    return {best[0], best[1]};
}

DesignGraph random_int_instance(Rng& rng) {
    while (true) {
        DesignGraph g;
        int n = 3 + static_cast<int>(rng.uniform_int(4));  // 3..6 nodes
        bool has_s = false, has_d = false;
        for (int i = 0; i < n; ++i) {
            NodeAttr nd;
            nd.id = i;
            nd.node_class.index = static_cast<int>(rng.uniform_int(3));
            has_s |= nd.node_class.index == profiles::kSupply;
            has_d |= nd.node_class.index == profiles::kDemand;
            nd.magnitude = nd.node_class.index == profiles::kTransfer
                               ? 0.0
                               : 1.0 + static_cast<double>(rng.uniform_int(3));
            nd.x = rng.uniform();
            nd.y = rng.uniform();
            g.nodes.push_back(nd);
        }
        if (!has_s || !has_d) continue;
        for (int u = 0; u < n; ++u)
            for (int v = u + 1; v < n; ++v) {
                if (rng.uniform() > 0.5) continue;
                EdgeAttr e;
                e.u = u;
                e.v = v;
                e.edge_type = 0;
                e.capacity = 1.0 + static_cast<double>(rng.uniform_int(3));
                e.unit_cost = static_cast<double>(rng.uniform_int(3));
                g.edges.push_back(e);
            }
        if (g.edges.size() > 6) continue;  // keep the oracle's search space small
        return g;
    }
}

double cut_capacity(const FlowNetwork& net, const std::vector<char>& side) {
    double cap = 0.0;
    for (const auto& a : net.arcs)
        if (side[a.from] && !side[a.to]) cap += a.capacity;
    return cap;
}

}  // namespace

TEST_CASE("diamond: two unit paths, total cost five") {
    FlowNetwork net;
    net.node_count = 4;
    net.source = 0;
    net.sink = 3;
    net.add_arc(0, 1, 1.0, 1.0);
    net.add_arc(0, 2, 1.0, 2.0);
    net.add_arc(1, 3, 1.0, 1.0);
    net.add_arc(2, 3, 1.0, 1.0);
    FlowResult r = min_cost_max_flow(net);
    REQUIRE(r.f_max == 2.0);
    REQUIRE(r.total_cost == 5.0);
    REQUIRE(r.arc_flows == std::vector<double>{1.0, 1.0, 1.0, 1.0});
}

TEST_CASE("cheap route takes priority below the bottleneck") {
    FlowNetwork net;
    net.node_count = 5;
    net.source = 0;
    net.sink = 4;
    net.add_arc(0, 1, 2.0, 0.0);  // bottleneck
    net.add_arc(1, 2, 2.0, 1.0);
    net.add_arc(1, 3, 2.0, 5.0);
    net.add_arc(2, 4, 2.0, 0.0);
    net.add_arc(3, 4, 2.0, 0.0);
    FlowResult r = min_cost_max_flow(net);
    REQUIRE(r.f_max == 2.0);
    REQUIRE(r.total_cost == 2.0);  // both units ride the cheap branch
    REQUIRE(r.arc_flows[2] == 0.0);
}

TEST_CASE("unreachable sink gives zero flow") {
    FlowNetwork net;
    net.node_count = 3;
    net.source = 0;
    net.sink = 2;
    net.add_arc(0, 1, 5.0, 1.0);
    FlowResult r = min_cost_max_flow(net);
    REQUIRE(r.f_max == 0.0);
    REQUIRE(r.total_cost == 0.0);
}

TEST_CASE("capacity ratio on pinned values") {
    DesignGraph g;
    g.nodes = {{0, {profiles::kSupply}, 9.0, 0.1, 0.1},
               {1, {profiles::kDemand}, 9.0, 0.9, 0.9}};
    g.edges = {{0, 1, 0, 2.0, 1.0}, {0, 1, 1, 6.0, 1.0}};
    FlowResult r;
    r.edge_net_flows = {1.0, 3.0};
    REQUIRE(capacity_ratio(g, r) == Catch::Approx(0.5));
    FlowResult bad;
    bad.edge_net_flows = {1.0};
    REQUIRE_THROWS_AS(capacity_ratio(g, bad), ShapeError);
    DesignGraph empty;
    empty.nodes = g.nodes;
    FlowResult none;
    REQUIRE_THROWS_AS(capacity_ratio(empty, none), MetricError);
}

TEST_CASE("edge cost sums a times capacity") {
    DesignGraph g;
    g.nodes = {{0, {profiles::kSupply}, 9.0, 0.1, 0.1},
               {1, {profiles::kDemand}, 9.0, 0.9, 0.9},
               {2, {profiles::kTransfer}, 0.0, 0.5, 0.5}};
    g.edges = {{0, 1, 0, 2.0, 1.0}, {1, 2, 1, 6.0, 1.0}, {0, 2, 2, 12.0, 1.0}};
    REQUIRE(edge_cost(g, 1.0) == Catch::Approx(20.0));
    REQUIRE(edge_cost(g, 2.5) == Catch::Approx(50.0));
    REQUIRE_THROWS_AS(edge_cost(g, 0.0), DomainError);
}

TEST_CASE("combined label is the pinned blend") {
    REQUIRE(combined_label(0.5, 20.0, 0.5, 40.0) == Catch::Approx(0.5));
    REQUIRE_THROWS_AS(combined_label(0.5, 20.0, 1.5, 40.0), DomainError);
    REQUIRE_THROWS_AS(combined_label(0.5, 20.0, 0.5, 0.0), DomainError);
}

TEST_CASE("augmentation adds exactly the super pair") {
    SynthConfig cfg;
    cfg.n = 33;
    cfg.seed = 5;
    Dataset ds = build_dataset(1, cfg);
    FlowNetwork net = augment_source_sink(ds.graphs[0]);
    REQUIRE(net.node_count == 35);
    REQUIRE(net.source == 33);
    REQUIRE(net.sink == 34);
    // 5 supply arcs + demand arcs + opposed interior pairs
    std::size_t interior = 0, boundary = 0;
    for (const auto& a : net.arcs)
        (a.design_edge >= 0 ? interior : boundary)++;
    REQUIRE(interior == 2 * ds.graphs[0].edges.size());
    REQUIRE(boundary >= 2);
}

TEST_CASE("augmentation requires both classes") {
    DesignGraph g;
    g.nodes = {{0, {profiles::kSupply}, 5.0, 0.5, 0.5},
               {1, {profiles::kTransfer}, 0.0, 0.4, 0.4}};
    g.edges = {{0, 1, 0, 2.0, 1.0}};
    REQUIRE_THROWS_AS(augment_source_sink(g), DegenerateNetworkError);
    g.nodes[0].node_class.index = profiles::kDemand;
    REQUIRE_THROWS_AS(augment_source_sink(g), DegenerateNetworkError);
}

TEST_CASE("solver agrees with exhaustive enumeration on 500 integer instances") {
    Rng rng(2024);
    for (int trial = 0; trial < 500; ++trial) {
        DesignGraph g = random_int_instance(rng);
        OracleResult oracle = enumerate_flows(g);
        double f = 0.0, cost = 0.0;
        try {
            FlowResult r = min_cost_max_flow(augment_source_sink(g));
            f = r.f_max;
            cost = r.total_cost;
        } catch (const DegenerateNetworkError&) {
            FAIL("instance generator guarantees both classes");
        }
        INFO("trial " << trial << " n=" << g.node_count() << " m=" << g.edge_count());
        REQUIRE(f == static_cast<double>(oracle.f_max));
        REQUIRE(cost == static_cast<double>(oracle.cost));
    }
}

TEST_CASE("flows conserve and respect capacities on synthetic graphs") {
    SynthConfig cfg;
    cfg.n = 20;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        cfg.seed = seed;
        Dataset ds = build_dataset(1, cfg);
        const DesignGraph& g = ds.graphs[0];
        FlowNetwork net = augment_source_sink(g);
        FlowResult r = min_cost_max_flow(net);

        REQUIRE(r.edge_net_flows.size() == g.edges.size());
        for (std::size_t k = 0; k < g.edges.size(); ++k)
            REQUIRE(std::fabs(r.edge_net_flows[k]) <= g.edges[k].capacity + 1e-9);

        std::vector<double> balance(net.node_count, 0.0);
        for (std::size_t i = 0; i < net.arcs.size(); ++i) {
            balance[net.arcs[i].from] -= r.arc_flows[i];
            balance[net.arcs[i].to] += r.arc_flows[i];
        }
        for (std::size_t v = 0; v < net.node_count; ++v) {
            if (static_cast<int>(v) == net.source || static_cast<int>(v) == net.sink)
                continue;
            REQUIRE(std::fabs(balance[v]) < 1e-9);
        }
        REQUIRE(std::fabs(balance[net.source] + r.f_max) < 1e-9);
        REQUIRE(std::fabs(balance[net.sink] - r.f_max) < 1e-9);
    }
}

TEST_CASE("min-cut certificate matches the flow value") {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        DesignGraph g = random_int_instance(rng);
        FlowNetwork net = augment_source_sink(g);
        FlowResult r = min_cost_max_flow(net);
        REQUIRE(r.source_side[net.source]);
        REQUIRE_FALSE(r.source_side[net.sink]);
        REQUIRE(cut_capacity(net, r.source_side) == Catch::Approx(r.f_max).margin(1e-9));
    }
}

TEST_CASE("removing an edge never increases max flow") {
    Rng rng(47);
    for (int trial = 0; trial < 50; ++trial) {
        DesignGraph g = random_int_instance(rng);
        if (g.edges.empty()) continue;
        double base = min_cost_max_flow(augment_source_sink(g)).f_max;
        for (std::size_t k = 0; k < g.edges.size(); ++k) {
            DesignGraph cut = g;
            cut.edges.erase(cut.edges.begin() + static_cast<long>(k));
            double reduced = min_cost_max_flow(augment_source_sink(cut)).f_max;
            REQUIRE(reduced <= base + 1e-12);
        }
    }
}

TEST_CASE("synthetic label equals delivered demand") {
    SynthConfig cfg;
    cfg.n = 15;
    cfg.seed = 9;
    Dataset ds = build_dataset(3, cfg);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        REQUIRE(ds.labels[i] == Catch::Approx(synthetic_label(ds.graphs[i])));
        REQUIRE(ds.labels[i] >= 0.0);
        REQUIRE(std::isfinite(ds.labels[i]));
        REQUIRE(synthetic_label(ds.graphs[i]) == delivered_demand(ds.graphs[i]));
    }
}

TEST_CASE("fractional capacities stay exact at 1e-6 resolution") {
    FlowNetwork net;
    net.node_count = 3;
    net.source = 0;
    net.sink = 2;
    net.add_arc(0, 1, 0.000001, 1.0);
    net.add_arc(1, 2, 0.000001, 1.0);
    FlowResult r = min_cost_max_flow(net);
    REQUIRE(r.f_max == 0.000001);
    REQUIRE_THROWS_AS(
        [&] {
            FlowNetwork big;
            big.node_count = 2;
            big.source = 0;
            big.sink = 1;
            big.add_arc(0, 1, 1e12, 1.0);
            return min_cost_max_flow(big);
        }(),
        DomainError);
}
