#pragma once

// Domain types for network designs: typed nodes with magnitudes and unit
// square positions, capacitated edges, class profiles, matrix views, and the
// JSON (de)serialization shared by every other module.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "resgen/errors.hpp"
#include "resgen/matrix.hpp"

namespace resgen {

// ---------------------------------------------------------------------------
// Class profiles
// ---------------------------------------------------------------------------

/// Closed real interval used for magnitude and cost ranges.
struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double x) const { return x >= lo && x <= hi; }
};

/// A node/edge class profile: how many node classes exist, what they mean,
/// which magnitude interval each class draws from, the edge capacity bins,
/// and the unit-cost range. The feature schema is derived from it.
struct Profile {
    std::string id;
    std::vector<std::string> class_names;
    std::vector<Interval> magnitude_ranges;   // one per class
    std::vector<double> capacity_bins;        // ascending, one per edge type
    Interval cost_range;

    int class_count() const { return static_cast<int>(class_names.size()); }
    int edge_type_count() const { return static_cast<int>(capacity_bins.size()); }

    /// Ordered feature names: one-hot class block, magnitude, degree,
    /// mean incident capacity.
    std::vector<std::string> feature_schema() const {
        std::vector<std::string> names;
        for (const auto& c : class_names) names.push_back("is_" + c);
        names.push_back("magnitude");
        names.push_back("degree");
        names.push_back("mean_incident_capacity");
        return names;
    }
    int feature_count() const { return class_count() + 3; }
};

/// The synthetic small-world profile: Supply/Demand/Transfer, three capacity
/// bins, f = 6 features.
inline Profile synthetic_profile() {
    Profile p;
    p.id = "synthetic";
    p.class_names = {"supply", "demand", "transfer"};
    p.magnitude_ranges = {{5.0, 15.0}, {1.0, 5.0}, {0.0, 0.0}};
    p.capacity_bins = {2.0, 6.0, 12.0};
    p.cost_range = {0.5, 2.0};
    return p;
}

namespace profiles {
constexpr int kSupply = 0;
constexpr int kDemand = 1;
constexpr int kTransfer = 2;
}  // namespace profiles

/// Look a profile up by id. Only "synthetic" is built in; callers with custom
/// profiles pass them around explicitly.
inline Profile profile_by_id(const std::string& id) {
    if (id == "synthetic") return synthetic_profile();
    throw ConfigError("unknown profile '" + id + "'");
}

// ---------------------------------------------------------------------------
// Design graphs
// ---------------------------------------------------------------------------

/// Index of a node class within its profile.
struct NodeClass {
    int index = 0;
    bool operator==(const NodeClass&) const = default;
};

struct NodeAttr {
    int id = 0;
    NodeClass node_class;
    double magnitude = 0.0;     // supply capacity / demand, commodity units
    double x = 0.0;             // position in the unit square
    double y = 0.0;
    bool operator==(const NodeAttr&) const = default;
};

struct EdgeAttr {
    int u = 0;
    int v = 0;
    int edge_type = 0;          // index into the profile's capacity bins
    double capacity = 0.0;      // commodity units
    double unit_cost = 0.0;     // cost per unit flow
    bool operator==(const EdgeAttr&) const = default;
};

/// A network design: simple undirected typed graph plus its profile id.
struct DesignGraph {
    std::string profile_id = "synthetic";
    std::vector<NodeAttr> nodes;
    std::vector<EdgeAttr> edges;

    int node_count() const { return static_cast<int>(nodes.size()); }
    int edge_count() const { return static_cast<int>(edges.size()); }
    bool operator==(const DesignGraph&) const = default;
};

/// N x f node feature matrix with its column schema.
struct FeatureMatrix {
    Matrix values;
    std::vector<std::string> schema;
};

/// Symmetric capacity-weighted adjacency matrix.
struct WeightedAdjacency {
    Matrix values;
};

/// Diagonal row-sum matrix of a weighted adjacency.
struct DegreeMatrix {
    Matrix values;
};

// ---------------------------------------------------------------------------
// Matrix views
// ---------------------------------------------------------------------------

/// Capacity-weighted adjacency. A_ij = capacity of edge (i, j), zero
/// elsewhere (including the diagonal).
inline WeightedAdjacency adjacency(const DesignGraph& g) {
    std::size_t n = g.nodes.size();
    WeightedAdjacency a{Matrix(n, n)};
    for (const auto& e : g.edges) {
        a.values(e.u, e.v) = e.capacity;
        a.values(e.v, e.u) = e.capacity;
    }
    return a;
}

/// D_ii = sum_j A_ij, off-diagonal zero.
inline DegreeMatrix degree(const WeightedAdjacency& a) {
    std::size_t n = a.values.rows();
    DegreeMatrix d{Matrix(n, n)};
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a.values(i, j);
        d.values(i, i) = s;
    }
    return d;
}

/// Node features per the profile schema: one-hot class, magnitude,
/// unweighted degree, mean incident edge capacity.
inline FeatureMatrix feature_matrix(const DesignGraph& g, const Profile& profile) {
    if (profile.id != g.profile_id)
        throw ConfigError("feature_matrix: graph profile '" + g.profile_id +
                          "' does not match supplied profile '" + profile.id + "'");
    std::size_t n = g.nodes.size();
    int c = profile.class_count();
    FeatureMatrix fm;
    fm.schema = profile.feature_schema();
    fm.values = Matrix(n, profile.feature_count());
    std::vector<int> deg(n, 0);
    std::vector<double> cap_sum(n, 0.0);
    for (const auto& e : g.edges) {
        deg[e.u] += 1;
        deg[e.v] += 1;
        cap_sum[e.u] += e.capacity;
        cap_sum[e.v] += e.capacity;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto& nd = g.nodes[i];
        fm.values(i, nd.node_class.index) = 1.0;
        fm.values(i, c) = nd.magnitude;
        fm.values(i, c + 1) = static_cast<double>(deg[i]);
        fm.values(i, c + 2) = deg[i] > 0 ? cap_sum[i] / deg[i] : 0.0;
    }
    return fm;
}

inline FeatureMatrix feature_matrix(const DesignGraph& g) {
    return feature_matrix(g, profile_by_id(g.profile_id));
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Check every type invariant; returns one message per violation, empty when
/// the design is valid. Never throws.
inline std::vector<std::string> validate(const DesignGraph& g) {
    std::vector<std::string> out;
    Profile profile;
    try {
        profile = profile_by_id(g.profile_id);
    } catch (const ConfigError&) {
        out.push_back("graph: unknown profile '" + g.profile_id + "'");
        return out;
    }
    int n = g.node_count();
    for (int i = 0; i < n; ++i) {
        const auto& nd = g.nodes[i];
        std::string tag = "node " + std::to_string(nd.id);
        if (nd.id != i)
            out.push_back(tag + ": ids must be consecutive 0..N-1 (found at index " +
                          std::to_string(i) + ")");
        if (nd.node_class.index < 0 || nd.node_class.index >= profile.class_count())
            out.push_back(tag + ": class index " + std::to_string(nd.node_class.index) +
                          " outside [0, " + std::to_string(profile.class_count()) + ")");
        if (!(nd.magnitude >= 0.0) || !std::isfinite(nd.magnitude))
            out.push_back(tag + ": magnitude must be finite and nonnegative");
        if (nd.node_class.index == profiles::kTransfer && g.profile_id == "synthetic" &&
            nd.magnitude != 0.0)
            out.push_back(tag + ": transfer nodes must have magnitude 0");
        if (nd.x < 0.0 || nd.x > 1.0 || nd.y < 0.0 || nd.y > 1.0)
            out.push_back(tag + ": position outside the unit square");
    }
    std::set<std::pair<int, int>> seen;
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        const auto& e = g.edges[k];
        std::string tag = "edge (" + std::to_string(e.u) + "," + std::to_string(e.v) + ")";
        if (e.u == e.v) {
            out.push_back(tag + ": self-loop");
            continue;
        }
        if (e.u < 0 || e.u >= n || e.v < 0 || e.v >= n) {
            out.push_back(tag + ": endpoint does not reference an existing node");
            continue;
        }
        auto key = std::minmax(e.u, e.v);
        if (!seen.insert(key).second) out.push_back(tag + ": duplicate edge");
        if (e.edge_type < 0 || e.edge_type >= profile.edge_type_count())
            out.push_back(tag + ": edge type " + std::to_string(e.edge_type) +
                          " outside [0, " + std::to_string(profile.edge_type_count()) + ")");
        if (!(e.capacity > 0.0) || !std::isfinite(e.capacity))
            out.push_back(tag + ": capacity must be positive");
        if (!(e.unit_cost >= 0.0) || !std::isfinite(e.unit_cost))
            out.push_back(tag + ": unit cost must be nonnegative");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace detail {

inline void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) throw ParseError(where + ": unknown field '" + it.key() + "'");
    }
}

inline nlohmann::json graph_to_json(const DesignGraph& g) {
    nlohmann::json doc;
    doc["profile"] = g.profile_id;
    doc["nodes"] = nlohmann::json::array();
    for (const auto& nd : g.nodes) {
        doc["nodes"].push_back({{"id", nd.id},
                                {"class", nd.node_class.index},
                                {"magnitude", nd.magnitude},
                                {"pos", {nd.x, nd.y}}});
    }
    doc["edges"] = nlohmann::json::array();
    for (const auto& e : g.edges) {
        doc["edges"].push_back({{"u", e.u},
                                {"v", e.v},
                                {"type", e.edge_type},
                                {"capacity", e.capacity},
                                {"unit_cost", e.unit_cost}});
    }
    return doc;
}

inline DesignGraph graph_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ParseError("graph document: expected a JSON object");
    require_keys(doc, {"profile", "nodes", "edges", "label"}, "graph document");
    DesignGraph g;
    try {
        g.profile_id = doc.at("profile").get<std::string>();
        for (const auto& jn : doc.at("nodes")) {
            require_keys(jn, {"id", "class", "magnitude", "pos"}, "node");
            NodeAttr nd;
            nd.id = jn.at("id").get<int>();
            nd.node_class.index = jn.at("class").get<int>();
            nd.magnitude = jn.at("magnitude").get<double>();
            const auto& pos = jn.at("pos");
            if (!pos.is_array() || pos.size() != 2)
                throw ParseError("node " + std::to_string(nd.id) + ": pos must be [x, y]");
            nd.x = pos[0].get<double>();
            nd.y = pos[1].get<double>();
            g.nodes.push_back(nd);
        }
        for (const auto& je : doc.at("edges")) {
            require_keys(je, {"u", "v", "type", "capacity", "unit_cost"}, "edge");
            EdgeAttr e;
            e.u = je.at("u").get<int>();
            e.v = je.at("v").get<int>();
            e.edge_type = je.at("type").get<int>();
            e.capacity = je.at("capacity").get<double>();
            e.unit_cost = je.at("unit_cost").get<double>();
            g.edges.push_back(e);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("graph document: ") + ex.what());
    }
    return g;
}

}  // namespace detail

/// One-line JSON document for a graph. Round-trips bit-exactly.
inline std::string serialize(const DesignGraph& g) {
    return detail::graph_to_json(g).dump();
}

inline DesignGraph deserialize(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("graph document: ") + ex.what());
    }
    return detail::graph_from_json(doc);
}

/// A labeled graph line in a dataset file.
struct LabeledGraph {
    DesignGraph graph;
    std::optional<double> label;
};

inline std::string serialize_labeled(const DesignGraph& g, std::optional<double> label) {
    nlohmann::json doc = detail::graph_to_json(g);
    if (label) doc["label"] = *label;
    return doc.dump();
}

inline LabeledGraph deserialize_labeled(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("graph document: ") + ex.what());
    }
    LabeledGraph out;
    out.graph = detail::graph_from_json(doc);
    if (doc.contains("label")) {
        if (!doc["label"].is_number()) throw ParseError("graph document: label must be a number");
        out.label = doc["label"].get<double>();
    }
    return out;
}

/// Read a JSON-lines dataset file: one graph per line, optional labels.
inline std::vector<LabeledGraph> read_dataset_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file '" + path + "'");
    std::vector<LabeledGraph> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(deserialize_labeled(line));
        } catch (const ParseError& ex) {
            throw ParseError("line " + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return out;
}

inline void write_dataset_file(const std::string& path, const std::vector<LabeledGraph>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write dataset file '" + path + "'");
    for (const auto& row : rows) out << serialize_labeled(row.graph, row.label) << '\n';
}

inline DesignGraph read_graph_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open graph file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

inline void write_graph_file(const std::string& path, const DesignGraph& g) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write graph file '" + path + "'");
    out << serialize(g) << '\n';
}

}  // namespace resgen
