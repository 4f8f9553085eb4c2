#pragma once

// Graph variational autoencoder: message-passing encoder to per-node diagonal
// Gaussians, autoregressive masked decoder (node init, edge selection, edge
// labeling, node update), a latent performance head, latent gradient descent
// toward a target score, and joint training of all loss terms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "resgen/errors.hpp"
#include "resgen/graph.hpp"
#include "resgen/matrix.hpp"
#include "resgen/nn.hpp"
#include "resgen/rng.hpp"
#include "resgen/tensor.hpp"

namespace resgen {

struct GeneratorConfig {
    std::size_t latent_dim = 16;  // d
    std::size_t enc_rounds = 4;   // message-passing rounds in the encoder
    std::size_t hidden = 32;      // hidden width of scorers and heads
    std::string profile_id = "synthetic";
    bool sample_edge_attrs = false;  // decoded unit costs sampled vs range midpoint

    void validate() const {
        if (latent_dim == 0 || hidden == 0) throw ConfigError("generator: zero width");
        if (enc_rounds == 0) throw ConfigError("generator: need >= 1 encoder round");
    }
};

struct LatentCode {
    Tensor mu;     // n x d
    Tensor sigma;  // n x d, positive
    Tensor z;      // n x d
    std::uint64_t eps_seed = 0;

    std::size_t node_count() const { return mu.rows(); }
};

struct ExpansionConstraints {
    DesignGraph base;        // locked existing system
    std::size_t new_nodes = 0;
};

namespace detail {

inline Matrix binary_adjacency(std::size_t n, const std::vector<std::pair<int, int>>& edges) {
    Matrix b(n, n);
    for (auto [u, v] : edges) {
        b(u, v) = 1.0;
        b(v, u) = 1.0;
    }
    return b;
}

inline Matrix one_hot_rows(const std::vector<int>& idx, std::size_t classes) {
    Matrix m(idx.size(), classes);
    for (std::size_t i = 0; i < idx.size(); ++i) m(i, static_cast<std::size_t>(idx[i])) = 1.0;
    return m;
}

}  // namespace detail

class GeneratorModel;

/// Mutable autoregressive decoding state. Node states live in a tensor so the
/// teacher-forced loss stays differentiable; masks are plain bits.
struct GenState {
    std::size_t n = 0;
    std::size_t state_width = 0;  // d + c
    std::vector<int> types;
    Tensor h;       // n x (d+c)
    Tensor h_init;  // 1 x (d+c), frozen graph summary
    Tensor h_now;   // 1 x (d+c), running graph summary
    std::vector<double> xs, ys;
    Matrix dist;  // pairwise Euclidean distances
    std::vector<std::vector<char>> mask_edge;               // M, n x n
    std::vector<std::vector<std::vector<char>>> mask_type;  // m, n x n x L
    std::vector<std::pair<int, int>> edges;                 // partial topology
    std::vector<int> edge_types;
    std::deque<int> focus;
    std::vector<char> enqueued;
    std::size_t decisions = 0;

    bool edge_allowed(int i, int j) const { return mask_edge[i][j] != 0; }
};

class GeneratorModel {
public:
    GeneratorConfig config;
    Profile profile;
    ParamSet params;
    std::map<std::size_t, std::size_t> node_count_hist;  // filled by training

    static GeneratorModel init(GeneratorConfig cfg, std::uint64_t seed) {
        cfg.validate();
        GeneratorModel m;
        m.config = cfg;
        m.profile = profile_by_id(cfg.profile_id);
        Rng rng(derive_seed(seed, 0x6e4u));
        const std::size_t f = m.profile.feature_count();
        const std::size_t h = m.state_width();

        m.params.add("enc.embed.w", {f, h}, glorot_uniform(f, h, rng));
        m.params.add("enc.embed.b", {1, h});
        m.params.add("enc.msg.w", {h, h}, glorot_uniform(h, h, rng));
        init_gru(m.params, "enc.gru", {h, h}, rng);
        m.params.add("enc.head.w", {h, 2 * cfg.latent_dim},
                     glorot_uniform(h, 2 * cfg.latent_dim, rng));
        m.params.add("enc.head.b", {1, 2 * cfg.latent_dim});

        init_mlp(m.params, "cls", m.classifier_spec(), rng);
        init_mlp(m.params, "edge", m.edge_scorer_spec(), rng);
        for (std::size_t l = 0; l < m.edge_type_count(); ++l)
            init_mlp(m.params, "type" + std::to_string(l), m.edge_scorer_spec(), rng);
        init_mlp(m.params, "stop", m.stop_scorer_spec(), rng);
        m.params.add("dec.msg.w", {h, h}, glorot_uniform(h, h, rng));
        init_gru(m.params, "dec.gru", {h, h}, rng);
        init_mlp(m.params, "perf1", m.perf_spec(), rng);
        init_mlp(m.params, "perf2", m.perf_spec(), rng);
        return m;
    }

    std::size_t class_count() const { return profile.class_count(); }
    std::size_t edge_type_count() const { return profile.edge_type_count(); }
    std::size_t state_width() const { return config.latent_dim + class_count(); }
    std::size_t phi_width() const { return 4 * state_width() + 1; }

    MlpSpec classifier_spec() const {
        return MlpSpec({config.latent_dim, config.hidden, config.hidden, class_count()},
                       Activation::kTanh, Activation::kIdentity);
    }
    MlpSpec edge_scorer_spec() const {
        return MlpSpec({phi_width(), config.hidden, 1}, Activation::kTanh,
                       Activation::kIdentity);
    }
    MlpSpec stop_scorer_spec() const {
        return MlpSpec({3 * state_width(), config.hidden, 1}, Activation::kTanh,
                       Activation::kIdentity);
    }
    MlpSpec perf_spec() const {
        return MlpSpec({config.latent_dim, config.hidden, 1}, Activation::kTanh,
                       Activation::kIdentity);
    }
    GruCellSpec gru_spec() const { return {state_width(), state_width()}; }

    void save(const std::string& path) const {
        nlohmann::json hist = nlohmann::json::array();
        for (const auto& [n, count] : node_count_hist)
            hist.push_back({{"n", n}, {"count", count}});
        nlohmann::json meta{{"kind", "generator"},
                            {"latent_dim", config.latent_dim},
                            {"enc_rounds", config.enc_rounds},
                            {"hidden", config.hidden},
                            {"profile_id", config.profile_id},
                            {"sample_edge_attrs", config.sample_edge_attrs},
                            {"node_count_hist", hist}};
        save_checkpoint(path, params, meta.dump());
    }

    static GeneratorModel load(const std::string& path) {
        Checkpoint ck = load_checkpoint(path);
        nlohmann::json meta;
        try {
            meta = nlohmann::json::parse(ck.metadata);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("generator checkpoint metadata: ") + e.what());
        }
        if (meta.value("kind", "") != "generator")
            throw ParseError("checkpoint is not a generator model");
        GeneratorModel m;
        m.config.latent_dim = meta.at("latent_dim").get<std::size_t>();
        m.config.enc_rounds = meta.at("enc_rounds").get<std::size_t>();
        m.config.hidden = meta.at("hidden").get<std::size_t>();
        m.config.profile_id = meta.at("profile_id").get<std::string>();
        m.config.sample_edge_attrs = meta.at("sample_edge_attrs").get<bool>();
        m.config.validate();
        m.profile = profile_by_id(m.config.profile_id);
        for (const auto& row : meta.at("node_count_hist"))
            m.node_count_hist[row.at("n").get<std::size_t>()] =
                row.at("count").get<std::size_t>();
        m.params = std::move(ck.params);
        return m;
    }

    std::size_t sample_node_count(Rng& rng) const {
        if (node_count_hist.empty())
            throw ConfigError("generator: no node-count distribution (model untrained)");
        std::size_t total = 0;
        for (const auto& [n, c] : node_count_hist) total += c;
        std::size_t r = rng.uniform_int(total);
        for (const auto& [n, c] : node_count_hist) {
            if (r < c) return n;
            r -= c;
        }
        return node_count_hist.rbegin()->first;
    }
};

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

/// Feature embedding, enc_rounds of sum-aggregated neighbor messages with a
/// GRU update, then a linear head to (mu, log sigma). sample=false returns
/// z = mu (used for deterministic reconstruction).
inline LatentCode encode(const GeneratorModel& model, const DesignGraph& g,
                         std::uint64_t eps_seed, bool sample = true) {
    if (g.profile_id != model.config.profile_id)
        throw ConfigError("encode: graph profile does not match model profile");
    const std::size_t n = g.nodes.size();
    const std::size_t d = model.config.latent_dim;
    if (n == 0) throw DomainError("encode: empty graph");

    std::vector<std::pair<int, int>> uv;
    uv.reserve(g.edges.size());
    for (const auto& e : g.edges) uv.push_back({e.u, e.v});
    auto b = std::make_shared<const Matrix>(detail::binary_adjacency(n, uv));

    Tensor x = Tensor::from(feature_matrix(g).values);
    Tensor h = tanh(linear(x, model.params.at("enc.embed.w"), model.params.at("enc.embed.b")));
    for (std::size_t round = 0; round < model.config.enc_rounds; ++round) {
        Tensor msg = matmul_const(b, matmul(h, model.params.at("enc.msg.w")));
        h = gru_cell(model.gru_spec(), model.params, "enc.gru", h, msg);
    }
    Tensor head = linear(h, model.params.at("enc.head.w"), model.params.at("enc.head.b"));

    LatentCode code;
    code.mu = slice_cols(head, 0, d);
    code.sigma = exp(slice_cols(head, d, 2 * d));
    code.eps_seed = eps_seed;
    if (sample) {
        Rng rng(derive_seed(eps_seed, 0xe95u));
        std::vector<double> eps(n * d);
        for (auto& e : eps) e = rng.normal();
        code.z = code.mu + code.sigma * Tensor::from({n, d}, std::move(eps));
    } else {
        code.z = code.mu;
    }
    return code;
}

/// Sum over nodes of KL(N(mu_v, diag sigma_v^2) || N(0, I)).
inline Tensor encode_loss(const LatentCode& code) {
    return kl_standard_normal(code.mu, code.sigma);
}

// ---------------------------------------------------------------------------
// Decoder state
// ---------------------------------------------------------------------------

/// Class logits f(z_v) for every node, n x c.
inline Tensor class_logits(const GeneratorModel& model, const LatentCode& code) {
    return mlp_forward(model.classifier_spec(), model.params, "cls", code.z);
}

/// Initializes decoding state: h_v = [z_v ; one-hot tau_v], graph summaries,
/// all-permitted masks minus the diagonal. tau defaults to the classifier
/// argmax; callers override it for teacher forcing, sampling, or locked nodes.
inline GenState init_nodes(const GeneratorModel& model, const LatentCode& code,
                           const std::vector<double>& xs, const std::vector<double>& ys,
                           std::vector<int> type_override = {}) {
    const std::size_t n = code.node_count();
    const std::size_t c = model.class_count();
    const std::size_t ntypes = model.edge_type_count();
    if (xs.size() != n || ys.size() != n)
        throw ShapeError("init_nodes: position count mismatch");

    GenState st;
    st.n = n;
    st.state_width = model.state_width();
    if (type_override.empty()) {
        Tensor logits = class_logits(model, code);
        st.types.resize(n);
        for (std::size_t v = 0; v < n; ++v) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < c; ++k)
                if (logits.at(v, k) > logits.at(v, best)) best = k;
            st.types[v] = static_cast<int>(best);
        }
    } else {
        if (type_override.size() != n) throw ShapeError("init_nodes: type count mismatch");
        for (int t : type_override)
            if (t < 0 || static_cast<std::size_t>(t) >= c)
                throw DomainError("init_nodes: type index out of range");
        st.types = std::move(type_override);
    }

    st.h = hstack({code.z, Tensor::from(detail::one_hot_rows(st.types, c))});
    st.h_init = rows_mean(st.h);
    st.h_now = st.h_init;
    st.xs = xs;
    st.ys = ys;
    st.dist = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            st.dist(i, j) = std::hypot(xs[i] - xs[j], ys[i] - ys[j]);
    st.mask_edge.assign(n, std::vector<char>(n, 1));
    for (std::size_t i = 0; i < n; ++i) st.mask_edge[i][i] = 0;
    st.mask_type.assign(n, std::vector<std::vector<char>>(n, std::vector<char>(ntypes, 1)));
    st.enqueued.assign(n, 0);
    return st;
}

/// phi_ij = [h_i, h_j, d_ij, H_init, H(t)] for every candidate j, as one
/// n x (4(d+c)+1) batch.
inline Tensor edge_features_for(const GenState& st, int i) {
    std::vector<double> dcol(st.n);
    for (std::size_t j = 0; j < st.n; ++j) dcol[j] = st.dist(i, j);
    return hstack({repeat_row(row(st.h, i), st.n), st.h,
                   Tensor::from({st.n, 1}, std::move(dcol)), repeat_row(st.h_init, st.n),
                   repeat_row(st.h_now, st.n)});
}

inline Tensor edge_feature(const GenState& st, int i, int j) {
    if (i == j) throw DomainError("edge_feature: i == j");
    return hstack({row(st.h, i), row(st.h, j),
                   Tensor::from({1, 1}, {st.dist(i, j)}), st.h_init, st.h_now});
}

struct EdgeProbs {
    Tensor connect_logits;  // (n+1) x 1, last entry = stop score
    Tensor connect;         // masked softmax of the above
    std::vector<double> connect_mask;
    Tensor type_scores;  // n x L raw scores (only when requested)
};

namespace detail {

inline Tensor connect_logits_for(const GeneratorModel& model, const GenState& st, int i,
                                 const Tensor& phi) {
    Tensor scores = mlp_forward(model.edge_scorer_spec(), model.params, "edge", phi);
    Tensor stop_in = hstack({row(st.h, i), st.h_init, st.h_now});
    Tensor stop = mlp_forward(model.stop_scorer_spec(), model.params, "stop", stop_in);
    return vstack({scores, stop});
}

inline std::vector<double> connect_mask_for(const GenState& st, int i) {
    std::vector<double> mask(st.n + 1, 0.0);
    for (std::size_t j = 0; j < st.n; ++j) mask[j] = st.mask_edge[i][j] ? 1.0 : 0.0;
    mask[st.n] = 1.0;  // stop is always available
    return mask;
}

inline Tensor type_scores_for(const GeneratorModel& model, const Tensor& phi) {
    std::vector<Tensor> cols;
    cols.reserve(model.edge_type_count());
    for (std::size_t l = 0; l < model.edge_type_count(); ++l)
        cols.push_back(mlp_forward(model.edge_scorer_spec(), model.params,
                                   "type" + std::to_string(l), phi));
    return hstack(cols);
}

}  // namespace detail

/// Connection distribution over {j} + stop, plus per-j type scores. A zero in
/// M forces an exactly-zero connection probability; stop is always available.
inline EdgeProbs edge_probs(const GeneratorModel& model, const GenState& st, int i,
                            bool with_types = true) {
    Tensor phi = edge_features_for(st, i);
    EdgeProbs out;
    out.connect_logits = detail::connect_logits_for(model, st, i, phi);
    out.connect_mask = detail::connect_mask_for(st, i);
    out.connect = masked_softmax(out.connect_logits, out.connect_mask);
    if (with_types) out.type_scores = detail::type_scores_for(model, phi);
    return out;
}

/// Conditional type distribution for a specific pair, 1 x L.
inline Tensor type_distribution(const GeneratorModel& model, const GenState& st, int i,
                                int j) {
    Tensor phi = edge_feature(st, i, j);
    std::vector<Tensor> cols;
    cols.reserve(model.edge_type_count());
    for (std::size_t l = 0; l < model.edge_type_count(); ++l)
        cols.push_back(mlp_forward(model.edge_scorer_spec(), model.params,
                                   "type" + std::to_string(l), phi));
    Tensor scores = hstack(cols);
    std::vector<double> mask(model.edge_type_count());
    for (std::size_t l = 0; l < mask.size(); ++l)
        mask[l] = st.mask_type[i][j][l] ? 1.0 : 0.0;
    return masked_softmax(scores, mask);
}

/// One round of Eq.-style message passing over the partial topology: every
/// node state moves through the GRU; the running summary and step advance.
inline void node_update(const GeneratorModel& model, GenState& st) {
    auto b = std::make_shared<const Matrix>(detail::binary_adjacency(st.n, st.edges));
    Tensor msg = matmul_const(b, matmul(st.h, model.params.at("dec.msg.w")));
    st.h = gru_cell(model.gru_spec(), model.params, "dec.gru", st.h, msg);
    st.h_now = rows_mean(st.h);
}

namespace detail {

inline void add_partial_edge(GenState& st, int i, int j, int type) {
    st.edges.push_back({i, j});
    st.edge_types.push_back(type);
    st.mask_edge[i][j] = 0;
    st.mask_edge[j][i] = 0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

struct DecodeOptions {
    enum class Mode { kGreedy, kSample };
    Mode mode = Mode::kGreedy;
    std::uint64_t seed = 0;
    const ExpansionConstraints* constraints = nullptr;
    std::size_t step_guard_factor = 4;  // decision budget = factor * n
};

/// Breadth-first autoregressive decode. Free mode starts from node 0 with
/// sampled positions; expansion mode locks the base graph (nodes, edges,
/// attributes) and only proposes edges touching new nodes.
inline DesignGraph decode(const GeneratorModel& model, const LatentCode& code,
                          const DecodeOptions& opt) {
    NoGradGuard guard;
    const std::size_t n = code.node_count();
    const Profile& prof = model.profile;
    Rng rng(derive_seed(opt.seed, 0xdecu));

    std::size_t n_base = 0;
    const DesignGraph* base = nullptr;
    if (opt.constraints) {
        base = &opt.constraints->base;
        n_base = base->nodes.size();
        if (n != n_base + opt.constraints->new_nodes)
            throw ShapeError("decode: latent rows != base nodes + new nodes");
        if (base->profile_id != model.config.profile_id)
            throw ConfigError("decode: constraint profile mismatch");
    }

    std::vector<double> xs(n), ys(n);
    for (std::size_t v = 0; v < n; ++v) {
        if (v < n_base) {
            xs[v] = base->nodes[v].x;
            ys[v] = base->nodes[v].y;
        } else {
            xs[v] = rng.uniform();
            ys[v] = rng.uniform();
        }
    }

    // Node classes: locked for base nodes; argmax or sampled otherwise.
    std::vector<int> types(n);
    {
        Tensor logits = class_logits(model, code);
        for (std::size_t v = 0; v < n; ++v) {
            if (v < n_base) {
                types[v] = base->nodes[v].node_class.index;
            } else if (opt.mode == DecodeOptions::Mode::kGreedy) {
                std::size_t best = 0;
                for (std::size_t k = 1; k < model.class_count(); ++k)
                    if (logits.at(v, k) > logits.at(v, best)) best = k;
                types[v] = static_cast<int>(best);
            } else {
                Tensor p = masked_softmax(row(logits, v),
                                          std::vector<double>(model.class_count(), 1.0));
                double r = rng.uniform();
                std::size_t pick = model.class_count() - 1;
                double acc = 0.0;
                for (std::size_t k = 0; k < model.class_count(); ++k) {
                    acc += p.values()[k];
                    if (r < acc) {
                        pick = k;
                        break;
                    }
                }
                types[v] = static_cast<int>(pick);
            }
        }
    }

    GenState st = init_nodes(model, code, xs, ys, types);

    if (base) {
        for (std::size_t i = 0; i < n_base; ++i)
            for (std::size_t j = 0; j < n_base; ++j)
                st.mask_edge[i][j] = 0;  // the locked region admits no new edges
        for (const auto& e : base->edges) detail::add_partial_edge(st, e.u, e.v, e.edge_type);
        if (!base->edges.empty()) node_update(model, st);  // states see the locked topology
        for (std::size_t v = n_base; v < n; ++v) {
            st.focus.push_back(static_cast<int>(v));
            st.enqueued[v] = 1;
        }
    } else {
        st.focus.push_back(0);
        st.enqueued[0] = 1;
    }

    const std::size_t guard_steps = opt.step_guard_factor * n;
    auto draw_index = [&](const Tensor& probs) {
        if (opt.mode == DecodeOptions::Mode::kGreedy) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < probs.size(); ++k)
                if (probs.values()[k] > probs.values()[best]) best = k;
            return best;
        }
        double r = rng.uniform();
        double acc = 0.0;
        for (std::size_t k = 0; k < probs.size(); ++k) {
            acc += probs.values()[k];
            if (r < acc) return k;
        }
        return probs.size() - 1;
    };

    while (!st.focus.empty()) {
        if (st.decisions >= guard_steps)
            throw DecodeError("decode exceeded the step guard (" +
                              std::to_string(guard_steps) + " decisions)");
        int i = st.focus.front();
        EdgeProbs probs = edge_probs(model, st, i, /*with_types=*/false);
        std::size_t choice = draw_index(probs.connect);
        ++st.decisions;
        if (choice == st.n) {
            st.focus.pop_front();
            continue;
        }
        int j = static_cast<int>(choice);
        Tensor type_dist = type_distribution(model, st, i, j);
        int type = static_cast<int>(draw_index(type_dist));
        detail::add_partial_edge(st, i, j, type);
        if (!st.enqueued[j]) {
            st.enqueued[j] = 1;
            st.focus.push_back(j);
        }
        node_update(model, st);
    }

    // Assemble the design: expansion keeps every base node; free decoding
    // drops candidates that never received an edge.
    std::vector<char> keep(n, 0);
    for (std::size_t v = 0; v < n_base; ++v) keep[v] = 1;
    for (auto [u, v] : st.edges) {
        keep[u] = 1;
        keep[v] = 1;
    }
    std::vector<int> remap(n, -1);
    int next_id = 0;
    for (std::size_t v = 0; v < n; ++v)
        if (keep[v]) remap[v] = next_id++;

    Rng attr_rng(derive_seed(opt.seed, 0xa774u));
    DesignGraph out;
    out.profile_id = model.config.profile_id;
    for (std::size_t v = 0; v < n; ++v) {
        if (!keep[v]) continue;
        NodeAttr node;
        node.id = remap[v];
        node.node_class.index = types[v];
        node.x = xs[v];
        node.y = ys[v];
        if (v < n_base) {
            node.magnitude = base->nodes[v].magnitude;
        } else if (types[v] == profiles::kTransfer) {
            node.magnitude = 0.0;
        } else {
            const auto& range = prof.magnitude_ranges.at(types[v]);
            node.magnitude = attr_rng.uniform(range.lo, range.hi);
        }
        out.nodes.push_back(node);
    }
    for (std::size_t k = 0; k < st.edges.size(); ++k) {
        auto [u, v] = st.edges[k];
        EdgeAttr e;
        e.u = remap[u];
        e.v = remap[v];
        e.edge_type = st.edge_types[k];
        if (base && k < base->edges.size()) {
            e.capacity = base->edges[k].capacity;
            e.unit_cost = base->edges[k].unit_cost;
        } else {
            e.capacity = prof.capacity_bins.at(e.edge_type);
            e.unit_cost = model.config.sample_edge_attrs
                              ? attr_rng.uniform(prof.cost_range.lo, prof.cost_range.hi)
                              : 0.5 * (prof.cost_range.lo + prof.cost_range.hi);
        }
        out.edges.push_back(e);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Teacher-forced reconstruction loss
// ---------------------------------------------------------------------------

/// Negative log-probability of reproducing the graph's node types and its
/// canonical breadth-first edge sequence (from node 0, ascending neighbor
/// ids). Restricted to node 0's component for disconnected inputs. Log-space
/// accumulation throughout; no probability products are formed.
inline Tensor decode_loss(const GeneratorModel& model, const LatentCode& code,
                          const DesignGraph& g) {
    const std::size_t n = g.nodes.size();
    if (code.node_count() != n) throw ShapeError("decode_loss: latent count mismatch");

    std::vector<std::vector<int>> neighbors(n);
    for (const auto& e : g.edges) {
        neighbors[e.u].push_back(e.v);
        neighbors[e.v].push_back(e.u);
    }
    for (auto& nb : neighbors) std::sort(nb.begin(), nb.end());
    std::map<std::pair<int, int>, int> edge_type_of;
    for (const auto& e : g.edges)
        edge_type_of[{std::min(e.u, e.v), std::max(e.u, e.v)}] = e.edge_type;

    // Component of node 0 (teacher forcing replays a single BFS tree).
    std::vector<char> in_component(n, 0);
    {
        std::vector<int> stack{0};
        in_component[0] = 1;
        while (!stack.empty()) {
            int u = stack.back();
            stack.pop_back();
            for (int w : neighbors[u])
                if (!in_component[w]) {
                    in_component[w] = 1;
                    stack.push_back(w);
                }
        }
    }

    std::vector<int> true_types(n);
    std::vector<double> xs(n), ys(n);
    for (std::size_t v = 0; v < n; ++v) {
        true_types[v] = g.nodes[v].node_class.index;
        xs[v] = g.nodes[v].x;
        ys[v] = g.nodes[v].y;
    }

    std::vector<Tensor> logps;

    // Node-type likelihood under the classifier.
    Tensor cls = class_logits(model, code);
    std::vector<double> all_classes(model.class_count(), 1.0);
    for (std::size_t v = 0; v < n; ++v) {
        if (!in_component[v]) continue;
        Tensor logit_row = row(cls, v);
        logps.push_back(element(logit_row, static_cast<std::size_t>(true_types[v])) -
                        masked_logsumexp(logit_row, all_classes));
    }

    GenState st = init_nodes(model, code, xs, ys, true_types);
    std::deque<int>& queue = st.focus;
    queue.push_back(0);
    st.enqueued[0] = 1;
    std::set<std::pair<int, int>> emitted;

    while (!queue.empty()) {
        int i = queue.front();
        for (int j : neighbors[i]) {
            auto key = std::make_pair(std::min(i, j), std::max(i, j));
            if (emitted.count(key)) continue;
            emitted.insert(key);

            Tensor phi = edge_features_for(st, i);
            Tensor logits = detail::connect_logits_for(model, st, i, phi);
            std::vector<double> mask = detail::connect_mask_for(st, i);
            logps.push_back(element(logits, static_cast<std::size_t>(j)) -
                            masked_logsumexp(logits, mask));

            Tensor phi_ij = edge_feature(st, i, j);
            std::vector<Tensor> cols;
            for (std::size_t l = 0; l < model.edge_type_count(); ++l)
                cols.push_back(mlp_forward(model.edge_scorer_spec(), model.params,
                                           "type" + std::to_string(l), phi_ij));
            Tensor type_scores = hstack(cols);
            std::vector<double> tmask(model.edge_type_count());
            for (std::size_t l = 0; l < tmask.size(); ++l)
                tmask[l] = st.mask_type[i][j][l] ? 1.0 : 0.0;
            int true_type = edge_type_of.at(key);
            logps.push_back(element(type_scores, static_cast<std::size_t>(true_type)) -
                            masked_logsumexp(type_scores, tmask));

            detail::add_partial_edge(st, i, j, true_type);
            if (!st.enqueued[j]) {
                st.enqueued[j] = 1;
                queue.push_back(j);
            }
            node_update(model, st);
        }
        // Stop decision closes out this focus node.
        Tensor phi = edge_features_for(st, i);
        Tensor logits = detail::connect_logits_for(model, st, i, phi);
        std::vector<double> mask = detail::connect_mask_for(st, i);
        logps.push_back(element(logits, st.n) - masked_logsumexp(logits, mask));
        queue.pop_front();
    }

    return -sum(vstack(logps));
}

// ---------------------------------------------------------------------------
// Performance head and latent ascent
// ---------------------------------------------------------------------------

/// R(z) = sum over nodes of sigmoid(f1(z_v)) * f2(z_v).
inline Tensor performance_head_z(const GeneratorModel& model, const Tensor& z) {
    Tensor gate = sigmoid(mlp_forward(model.perf_spec(), model.params, "perf1", z));
    Tensor value = mlp_forward(model.perf_spec(), model.params, "perf2", z);
    return sum(gate * value);
}

inline Tensor performance_head(const GeneratorModel& model, const LatentCode& code) {
    return performance_head_z(model, code.z);
}

/// |R(z) - q|; the head's training and ascent objective.
inline Tensor head_loss_z(const GeneratorModel& model, const Tensor& z, double q) {
    return abs(performance_head_z(model, z) - Tensor::scalar(q));
}

struct AscentResult {
    LatentCode code;
    std::vector<double> trajectory;  // L_Q after each accepted step, non-increasing
};

/// Gradient descent on z only (parameters frozen) toward R(z) = q_target,
/// with a backtracking halving line search so the loss never increases.
inline AscentResult latent_ascent(const GeneratorModel& model, const LatentCode& code,
                                  double q_target, std::size_t steps, double step_size) {
    if (!(step_size > 0.0)) throw ConfigError("latent_ascent: step size must be positive");
    std::vector<double> zvals = code.z.values();
    const auto shape = code.z.shape();

    AscentResult out;
    double current = [&] {
        NoGradGuard guard;
        return head_loss_z(model, Tensor::from(shape, zvals), q_target).item();
    }();
    out.trajectory.push_back(current);

    for (std::size_t step = 0; step < steps; ++step) {
        if (current == 0.0) break;  // exact fixed point
        Tensor z = Tensor::param(shape, zvals);
        Tensor loss = head_loss_z(model, z, q_target);
        loss.backward();
        const auto& grad = z.grad();
        for (double gv : grad)
            if (!std::isfinite(gv))
                throw TrainingError("latent ascent produced a non-finite gradient");

        double eta = step_size;
        bool accepted = false;
        NoGradGuard guard;
        for (int halving = 0; halving < 30; ++halving) {
            std::vector<double> trial(zvals.size());
            for (std::size_t k = 0; k < trial.size(); ++k)
                trial[k] = zvals[k] - eta * grad[k];
            double trial_loss =
                head_loss_z(model, Tensor::from(shape, trial), q_target).item();
            if (trial_loss <= current) {
                zvals = std::move(trial);
                current = trial_loss;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        out.trajectory.push_back(current);
        if (!accepted) break;  // no descent direction at this scale
    }

    out.code.mu = code.mu;
    out.code.sigma = code.sigma;
    out.code.z = Tensor::from(shape, zvals);
    out.code.eps_seed = code.eps_seed;
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct GeneratorHistory {
    std::vector<double> kl, dec, perf, total;  // per-epoch means
};

struct GeneratorTrainOptions {
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    double w_kl = 1.0, w_dec = 1.0, w_perf = 1.0;
    OptimizerRule rule = OptimizerRule::adam(1e-3);
    std::uint64_t seed = 0;
    std::size_t subsample = 0;  // optional per-epoch graph subsample (0 = all)
};

/// Joint loss w_kl * L_enc + w_dec * L_dec + w_perf * |R(z) - Q| per graph,
/// averaged over minibatches.
inline GeneratorHistory train_generator(GeneratorModel& model,
                                        const std::vector<DesignGraph>& graphs,
                                        const std::vector<double>& labels,
                                        const GeneratorTrainOptions& opt) {
    if (graphs.size() != labels.size()) throw ShapeError("train_generator: label count");
    if (graphs.empty()) throw ConfigError("train_generator: empty dataset");
    if (opt.epochs < 1) throw ConfigError("train_generator: epochs must be >= 1");

    for (const auto& g : graphs)
        ++model.node_count_hist[g.nodes.size()];

    Rng order_rng(derive_seed(opt.seed, 0x9e4u));
    GeneratorHistory history;
    Optimizer optimizer(opt.rule);

    for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::vector<std::size_t> order(graphs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);
        if (opt.subsample > 0 && opt.subsample < order.size())
            order.resize(opt.subsample);

        double sum_kl = 0.0, sum_dec = 0.0, sum_perf = 0.0, sum_total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
            std::size_t end = std::min(start + opt.batch_size, order.size());
            std::vector<Tensor> batch_terms;
            for (std::size_t b = start; b < end; ++b) {
                std::size_t idx = order[b];
                std::uint64_t eps_seed = derive_seed(opt.seed, epoch, idx);
                LatentCode code = encode(model, graphs[idx], eps_seed);
                Tensor l_kl = encode_loss(code);
                Tensor l_dec = decode_loss(model, code, graphs[idx]);
                Tensor l_perf = abs(performance_head(model, code) -
                                    Tensor::scalar(labels[idx]));
                sum_kl += l_kl.item();
                sum_dec += l_dec.item();
                sum_perf += l_perf.item();
                batch_terms.push_back(opt.w_kl * l_kl + opt.w_dec * l_dec +
                                      opt.w_perf * l_perf);
            }
            Tensor batch_loss = mean(vstack(batch_terms));
            if (!std::isfinite(batch_loss.item()))
                throw TrainingError("generator training diverged at epoch " +
                                    std::to_string(epoch));
            sum_total += batch_loss.item() * static_cast<double>(end - start);
            model.params.zero_grad();
            batch_loss.backward();
            optimizer.step(model.params);
        }
        double inv = 1.0 / static_cast<double>(order.size());
        history.kl.push_back(sum_kl * inv);
        history.dec.push_back(sum_dec * inv);
        history.perf.push_back(sum_perf * inv);
        history.total.push_back(sum_total * inv);
    }
    return history;
}

/// Latent code for expanding a locked base system: encoded rows for base
/// nodes, standard-normal rows for the new candidates.
inline LatentCode expansion_code(const GeneratorModel& model, const DesignGraph& base,
                                 std::size_t new_nodes, std::uint64_t seed,
                                 bool sample = true) {
    LatentCode base_code = encode(model, base, derive_seed(seed, 0xba5eu), sample);
    const std::size_t d = model.config.latent_dim;
    Rng rng(derive_seed(seed, 0x9ec3u));
    std::vector<double> mu(new_nodes * d, 0.0), sigma(new_nodes * d, 1.0),
        z(new_nodes * d);
    for (auto& v : z) v = sample ? rng.normal() : 0.0;

    LatentCode code;
    code.mu = vstack({base_code.mu, Tensor::from({new_nodes, d}, std::move(mu))});
    code.sigma = vstack({base_code.sigma, Tensor::from({new_nodes, d}, std::move(sigma))});
    code.z = vstack({base_code.z, Tensor::from({new_nodes, d}, std::move(z))});
    code.eps_seed = seed;
    return code;
}

}  // namespace resgen
