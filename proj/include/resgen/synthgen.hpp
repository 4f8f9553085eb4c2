#pragma once

// Labeled training corpus: connected Watts-Strogatz small-world designs with
// degree-biased supply placement and flow-derived performance labels.

#include <cmath>
#include <cstdint>
#include <set>
#include <utility>
#include <vector>

#include "resgen/errors.hpp"
#include "resgen/flow.hpp"
#include "resgen/graph.hpp"
#include "resgen/rng.hpp"

namespace resgen {

struct SynthConfig {
    std::size_t n = 33;
    std::size_t k = 2;       // ring neighbors per node, even
    double p_rewire = 0.3;
    double beta = 1.0;       // degree-to-supply affinity
    Profile profile = synthetic_profile();
    std::uint64_t seed = 0;

    void validate() const {
        if (!(n > k && k >= 2)) throw ConfigError("synth: need n > k >= 2");
        if (k % 2 != 0) throw ConfigError("synth: k must be even");
        if (!(p_rewire >= 0.0 && p_rewire <= 1.0))
            throw ConfigError("synth: p_rewire outside [0,1]");
        if (!(beta >= 0.0)) throw ConfigError("synth: beta must be >= 0");
        if (profile.capacity_bins.empty()) throw ConfigError("synth: no capacity bins");
    }
};

struct Dataset {
    std::vector<DesignGraph> graphs;
    std::vector<double> labels;
    SynthConfig config;

    std::size_t size() const { return graphs.size(); }
};

struct Topology {
    std::size_t n = 0;
    std::vector<std::pair<int, int>> edges;  // u < v

    std::vector<std::size_t> degrees() const {
        std::vector<std::size_t> deg(n, 0);
        for (auto [u, v] : edges) {
            ++deg[u];
            ++deg[v];
        }
        return deg;
    }
};

namespace detail {

inline bool topology_connected(const Topology& t) {
    if (t.n == 0) return false;
    std::vector<std::vector<int>> adj(t.n);
    for (auto [u, v] : t.edges) {
        adj[u].push_back(v);
        adj[v].push_back(u);
    }
    std::vector<char> seen(t.n, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        for (int w : adj[u])
            if (!seen[w]) {
                seen[w] = 1;
                ++count;
                stack.push_back(w);
            }
    }
    return count == t.n;
}

inline Topology watts_strogatz_once(std::size_t n, std::size_t k, double p_rewire, Rng& rng) {
    // Ring lattice: each node linked to its k/2 clockwise neighbors, then each
    // such edge is rewired to a random non-duplicate target with prob p.
    std::set<std::pair<int, int>> edge_set;
    auto key = [](int a, int b) { return std::make_pair(std::min(a, b), std::max(a, b)); };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 1; j <= k / 2; ++j)
            edge_set.insert(key(static_cast<int>(i), static_cast<int>((i + j) % n)));

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 1; j <= k / 2; ++j) {
            auto old_key = key(static_cast<int>(i), static_cast<int>((i + j) % n));
            if (!edge_set.count(old_key)) continue;  // already rewired away
            if (rng.uniform() >= p_rewire) continue;
            // Uniform new endpoint avoiding self-loops and duplicates; keep
            // the original edge when no candidate exists.
            std::vector<int> candidates;
            candidates.reserve(n);
            for (std::size_t w = 0; w < n; ++w) {
                if (w == i) continue;
                auto cand = key(static_cast<int>(i), static_cast<int>(w));
                if (cand == old_key || edge_set.count(cand)) continue;
                candidates.push_back(static_cast<int>(w));
            }
            if (candidates.empty()) continue;
            int w = candidates[rng.uniform_int(candidates.size())];
            edge_set.erase(old_key);
            edge_set.insert(key(static_cast<int>(i), w));
        }
    }

    Topology t;
    t.n = n;
    t.edges.assign(edge_set.begin(), edge_set.end());
    return t;
}

}  // namespace detail

/// Connected simple graph with exactly n*k/2 edges; disconnected draws are
/// rejected and regenerated from fresh sub-seeds.
inline Topology watts_strogatz(std::size_t n, std::size_t k, double p_rewire,
                               std::uint64_t seed) {
    if (!(n > k && k >= 2) || k % 2 != 0)
        throw ConfigError("watts_strogatz: need n > k >= 2 with k even");
    if (!(p_rewire >= 0.0 && p_rewire <= 1.0))
        throw ConfigError("watts_strogatz: p_rewire outside [0,1]");
    constexpr int kMaxAttempts = 10000;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        Rng rng(derive_seed(seed, 0x7753u, static_cast<std::uint64_t>(attempt)));
        Topology t = detail::watts_strogatz_once(n, k, p_rewire, rng);
        if (detail::topology_connected(t)) return t;
    }
    throw DomainError("watts_strogatz: no connected sample found");
}

/// Supply nodes drawn without replacement with weight exp(beta * degree)
/// (ceil(0.15 n) of them); the rest are Demand/Transfer i.i.d. 0.7/0.3.
inline std::vector<int> assign_node_classes(const Topology& t, double beta,
                                            std::uint64_t seed) {
    if (!(beta >= 0.0)) throw ConfigError("assign_node_classes: beta must be >= 0");
    Rng rng(derive_seed(seed, 0xc1a5u));
    auto deg = t.degrees();
    std::size_t max_deg = 0;
    for (auto d : deg) max_deg = std::max(max_deg, d);

    std::size_t n_supply =
        static_cast<std::size_t>(std::ceil(0.15 * static_cast<double>(t.n)));
    std::vector<int> classes(t.n, -1);
    // Weights are shifted by the max degree so large beta cannot overflow;
    // the normalized distribution is unchanged.
    std::vector<double> weight(t.n);
    for (std::size_t v = 0; v < t.n; ++v)
        weight[v] = std::exp(beta * (static_cast<double>(deg[v]) -
                                     static_cast<double>(max_deg)));
    for (std::size_t s = 0; s < n_supply; ++s) {
        double total = 0.0;
        for (std::size_t v = 0; v < t.n; ++v)
            if (classes[v] < 0) total += weight[v];
        double r = rng.uniform() * total;
        std::size_t chosen = t.n;
        for (std::size_t v = 0; v < t.n; ++v) {
            if (classes[v] >= 0) continue;
            r -= weight[v];
            if (r <= 0.0) {
                chosen = v;
                break;
            }
        }
        if (chosen == t.n) {  // numeric edge: take the last unassigned node
            for (std::size_t v = t.n; v-- > 0;)
                if (classes[v] < 0) {
                    chosen = v;
                    break;
                }
        }
        classes[chosen] = profiles::kSupply;
    }
    for (std::size_t v = 0; v < t.n; ++v)
        if (classes[v] < 0)
            classes[v] = rng.uniform() < 0.7 ? profiles::kDemand : profiles::kTransfer;
    return classes;
}

/// Draw magnitudes, positions, and edge attributes for a classed topology.
inline DesignGraph sample_features(const Topology& t, const std::vector<int>& classes,
                                   const SynthConfig& cfg, std::uint64_t seed) {
    if (classes.size() != t.n) throw ShapeError("sample_features: class count mismatch");
    Rng rng(derive_seed(seed, 0xfea7u));
    DesignGraph g;
    g.profile_id = cfg.profile.id;
    g.nodes.reserve(t.n);
    for (std::size_t v = 0; v < t.n; ++v) {
        NodeAttr node;
        node.id = static_cast<int>(v);
        node.node_class.index = classes[v];
        const auto& range = cfg.profile.magnitude_ranges.at(classes[v]);
        node.magnitude = classes[v] == profiles::kTransfer
                             ? 0.0
                             : rng.uniform(range.lo, range.hi);
        node.x = rng.uniform();
        node.y = rng.uniform();
        g.nodes.push_back(node);
    }
    g.edges.reserve(t.edges.size());
    for (auto [u, v] : t.edges) {
        EdgeAttr e;
        e.u = u;
        e.v = v;
        e.edge_type = static_cast<int>(rng.uniform_int(cfg.profile.capacity_bins.size()));
        e.capacity = cfg.profile.capacity_bins[e.edge_type];
        e.unit_cost = rng.uniform(cfg.profile.cost_range.lo, cfg.profile.cost_range.hi);
        g.edges.push_back(e);
    }
    return g;
}

/// count labeled graphs; label = min-cost max-flow magnitude. Per-graph
/// sub-seeds make the build order-independent and reproducible.
inline Dataset build_dataset(std::size_t count, const SynthConfig& cfg) {
    if (count < 1) throw ConfigError("build_dataset: count must be >= 1");
    cfg.validate();
    Dataset ds;
    ds.config = cfg;
    ds.graphs.reserve(count);
    ds.labels.reserve(count);
    constexpr int kMaxRetries = 100;
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t graph_seed = derive_seed(cfg.seed, 0xd5u, i);
        bool done = false;
        for (int attempt = 0; attempt < kMaxRetries && !done; ++attempt) {
            std::uint64_t s = derive_seed(graph_seed, static_cast<std::uint64_t>(attempt));
            Topology t = watts_strogatz(cfg.n, cfg.k, cfg.p_rewire, s);
            auto classes = assign_node_classes(t, cfg.beta, s);
            DesignGraph g = sample_features(t, classes, cfg, s);
            try {
                double label = synthetic_label(g);
                ds.graphs.push_back(std::move(g));
                ds.labels.push_back(label);
                done = true;
            } catch (const DegenerateNetworkError&) {
                // no demand drawn (vanishingly rare); resample this graph
            }
        }
        if (!done) throw DomainError("build_dataset: retry budget exhausted");
    }
    return ds;
}

inline std::vector<LabeledGraph> to_labeled(const Dataset& ds) {
    std::vector<LabeledGraph> out;
    out.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        out.push_back({ds.graphs[i], ds.labels[i]});
    return out;
}

inline Dataset dataset_from_labeled(const std::vector<LabeledGraph>& rows,
                                    SynthConfig cfg = {}) {
    Dataset ds;
    ds.config = std::move(cfg);
    ds.graphs.reserve(rows.size());
    ds.labels.reserve(rows.size());
    for (const auto& row : rows) {
        if (!row.label)
            throw ParseError("dataset row without a label cannot join a labeled dataset");
        ds.graphs.push_back(row.graph);
        ds.labels.push_back(*row.label);
    }
    return ds;
}

}  // namespace resgen
