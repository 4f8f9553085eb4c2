#pragma once

// The closed generative-design loop: sample latent candidates around the best
// known designs, push them toward a target score, decode, screen with the
// estimator, relabel the survivors with the true metric, blend them into the
// dataset, and fine-tune both models. Every stage draws from seeds derived
// off (master seed, iteration, candidate), so a run is a pure function of
// (config, seed).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "resgen/errors.hpp"
#include "resgen/estimator.hpp"
#include "resgen/flow.hpp"
#include "resgen/generator.hpp"
#include "resgen/graph.hpp"
#include "resgen/resilience.hpp"
#include "resgen/rng.hpp"
#include "resgen/synthgen.hpp"

namespace resgen {

struct PipelineConfig {
    // data source: a labeled JSONL file, or synthesis when the path is empty
    std::string dataset_path;
    std::size_t synth_count = 500;
    SynthConfig synth;

    // objective
    bool maximize = true;
    bool use_combined_label = false;  // Q from capacity ratio + cost instead of f_max
    double alpha = 0.5;
    double cost_k = 1.0;
    double unit_a = 1.0;
    double q_target = std::numeric_limits<double>::quiet_NaN();  // NaN = automatic
    double q_target_factor = 1.2;

    // loop shape
    std::size_t batch = 500;  // B candidates per iteration
    std::size_t top_c = 5;
    std::size_t max_iterations = 150;
    double epsilon = 1e-6;
    std::size_t resample_budget = 8;
    double prior_fraction = 0.0;
    std::size_t ascent_steps = 15;
    double ascent_step_size = 0.05;

    // model training
    GeneratorConfig generator;
    EstimatorConfig estimator;
    std::string estimator_checkpoint;  // optional pretrained models
    std::string generator_checkpoint;
    std::size_t pretrain_est_epochs = 30;
    std::size_t pretrain_gen_epochs = 8;
    std::size_t est_finetune_epochs = 2;
    std::size_t gen_finetune_epochs = 1;
    std::size_t gen_finetune_subsample = 24;
    double est_lr = 3e-3;
    double gen_lr = 1e-3;
    double w_kl = 1.0, w_dec = 1.0, w_perf = 1.0;

    // reporting
    bool compute_edns = false;  // per-iteration EDNS of the incumbent best
    EdnsConfig edns;
    bool store_iteration_designs = false;

    std::uint64_t seed = 0;

    void validate() const {
        if (top_c == 0 || top_c > batch) throw ConfigError("pipeline: need 0 < c <= B");
        if (max_iterations < 1) throw ConfigError("pipeline: need >= 1 iteration");
        if (!(epsilon > 0.0)) throw ConfigError("pipeline: epsilon must be positive");
        if (!(prior_fraction >= 0.0 && prior_fraction <= 1.0))
            throw ConfigError("pipeline: prior_fraction outside [0,1]");
        if (resample_budget < 1) throw ConfigError("pipeline: resample budget >= 1");
    }
};

struct IterationRecord {
    std::size_t iteration = 0;        // 1-based
    double best_estimated_q = 0.0;    // best-so-far estimator score (elitism)
    double mean_topc_estimated = 0.0;
    double mean_topc_true = 0.0;      // mean true label of the blended designs
    std::vector<std::size_t> blended_ids;
    double est_train_mse = 0.0;
    double gen_kl = 0.0, gen_dec = 0.0, gen_perf = 0.0;
    double edns = std::numeric_limits<double>::quiet_NaN();  // NaN = not computed

    bool operator==(const IterationRecord& o) const {
        auto same = [](double a, double b) {
            return (std::isnan(a) && std::isnan(b)) || a == b;
        };
        return iteration == o.iteration && same(best_estimated_q, o.best_estimated_q) &&
               same(mean_topc_estimated, o.mean_topc_estimated) &&
               same(mean_topc_true, o.mean_topc_true) && blended_ids == o.blended_ids &&
               same(est_train_mse, o.est_train_mse) && same(gen_kl, o.gen_kl) &&
               same(gen_dec, o.gen_dec) && same(gen_perf, o.gen_perf) && same(edns, o.edns);
    }
};

// ---------------------------------------------------------------------------
// Config JSON (schema mirrors PipelineConfig; unknown keys rejected)
// ---------------------------------------------------------------------------

inline nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
    nlohmann::json j{
        {"dataset_path", c.dataset_path},
        {"synth_count", c.synth_count},
        {"synth", {{"n", c.synth.n}, {"k", c.synth.k}, {"p_rewire", c.synth.p_rewire},
                   {"beta", c.synth.beta}, {"seed", c.synth.seed}}},
        {"maximize", c.maximize},
        {"use_combined_label", c.use_combined_label},
        {"alpha", c.alpha},
        {"cost_k", c.cost_k},
        {"unit_a", c.unit_a},
        {"q_target_factor", c.q_target_factor},
        {"batch", c.batch},
        {"top_c", c.top_c},
        {"max_iterations", c.max_iterations},
        {"epsilon", c.epsilon},
        {"resample_budget", c.resample_budget},
        {"prior_fraction", c.prior_fraction},
        {"ascent_steps", c.ascent_steps},
        {"ascent_step_size", c.ascent_step_size},
        {"generator", {{"latent_dim", c.generator.latent_dim},
                       {"enc_rounds", c.generator.enc_rounds},
                       {"hidden", c.generator.hidden},
                       {"profile_id", c.generator.profile_id},
                       {"sample_edge_attrs", c.generator.sample_edge_attrs}}},
        {"estimator", {{"gcn_widths", c.estimator.gcn_widths},
                       {"readout_widths", c.estimator.readout_widths},
                       {"add_self_loops", c.estimator.add_self_loops},
                       {"profile_id", c.estimator.profile_id}}},
        {"estimator_checkpoint", c.estimator_checkpoint},
        {"generator_checkpoint", c.generator_checkpoint},
        {"pretrain_est_epochs", c.pretrain_est_epochs},
        {"pretrain_gen_epochs", c.pretrain_gen_epochs},
        {"est_finetune_epochs", c.est_finetune_epochs},
        {"gen_finetune_epochs", c.gen_finetune_epochs},
        {"gen_finetune_subsample", c.gen_finetune_subsample},
        {"est_lr", c.est_lr},
        {"gen_lr", c.gen_lr},
        {"w_kl", c.w_kl},
        {"w_dec", c.w_dec},
        {"w_perf", c.w_perf},
        {"compute_edns", c.compute_edns},
        {"edns", {{"grid", c.edns.grid.cells_per_side}, {"p0", c.edns.p0},
                  {"gamma", c.edns.gamma}, {"n_samples", c.edns.n_samples},
                  {"seed", c.edns.seed}}},
        {"store_iteration_designs", c.store_iteration_designs},
        {"seed", c.seed}};
    if (!std::isnan(c.q_target)) j["q_target"] = c.q_target;
    return j;
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const char* where,
                                std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known)
            throw ParseError(std::string("pipeline config: unknown key '") + key +
                             "' in " + where);
    }
}

}  // namespace detail

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    PipelineConfig c;
    if (!j.is_object()) throw ParseError("pipeline config: expected an object");
    detail::reject_unknown_keys(
        j, "config",
        {"dataset_path", "synth_count", "synth", "maximize", "use_combined_label",
         "alpha", "cost_k", "unit_a", "q_target", "q_target_factor", "batch", "top_c",
         "max_iterations", "epsilon", "resample_budget", "prior_fraction",
         "ascent_steps", "ascent_step_size", "generator", "estimator",
         "estimator_checkpoint", "generator_checkpoint", "pretrain_est_epochs",
         "pretrain_gen_epochs", "est_finetune_epochs", "gen_finetune_epochs",
         "gen_finetune_subsample", "est_lr", "gen_lr", "w_kl", "w_dec", "w_perf",
         "compute_edns", "edns", "store_iteration_designs", "seed"});
    if (j.contains("synth"))
        detail::reject_unknown_keys(j.at("synth"), "synth",
                                    {"n", "k", "p_rewire", "beta", "seed"});
    if (j.contains("generator"))
        detail::reject_unknown_keys(
            j.at("generator"), "generator",
            {"latent_dim", "enc_rounds", "hidden", "profile_id", "sample_edge_attrs"});
    if (j.contains("estimator"))
        detail::reject_unknown_keys(
            j.at("estimator"), "estimator",
            {"gcn_widths", "readout_widths", "add_self_loops", "profile_id"});
    if (j.contains("edns"))
        detail::reject_unknown_keys(j.at("edns"), "edns",
                                    {"grid", "p0", "gamma", "n_samples", "seed"});
    try {
        c.dataset_path = j.value("dataset_path", c.dataset_path);
        c.synth_count = j.value("synth_count", c.synth_count);
        if (j.contains("synth")) {
            const auto& s = j.at("synth");
            c.synth.n = s.value("n", c.synth.n);
            c.synth.k = s.value("k", c.synth.k);
            c.synth.p_rewire = s.value("p_rewire", c.synth.p_rewire);
            c.synth.beta = s.value("beta", c.synth.beta);
            c.synth.seed = s.value("seed", c.synth.seed);
        }
        c.maximize = j.value("maximize", c.maximize);
        c.use_combined_label = j.value("use_combined_label", c.use_combined_label);
        c.alpha = j.value("alpha", c.alpha);
        c.cost_k = j.value("cost_k", c.cost_k);
        c.unit_a = j.value("unit_a", c.unit_a);
        if (j.contains("q_target")) c.q_target = j.at("q_target").get<double>();
        c.q_target_factor = j.value("q_target_factor", c.q_target_factor);
        c.batch = j.value("batch", c.batch);
        c.top_c = j.value("top_c", c.top_c);
        c.max_iterations = j.value("max_iterations", c.max_iterations);
        c.epsilon = j.value("epsilon", c.epsilon);
        c.resample_budget = j.value("resample_budget", c.resample_budget);
        c.prior_fraction = j.value("prior_fraction", c.prior_fraction);
        c.ascent_steps = j.value("ascent_steps", c.ascent_steps);
        c.ascent_step_size = j.value("ascent_step_size", c.ascent_step_size);
        if (j.contains("generator")) {
            const auto& g = j.at("generator");
            c.generator.latent_dim = g.value("latent_dim", c.generator.latent_dim);
            c.generator.enc_rounds = g.value("enc_rounds", c.generator.enc_rounds);
            c.generator.hidden = g.value("hidden", c.generator.hidden);
            c.generator.profile_id = g.value("profile_id", c.generator.profile_id);
            c.generator.sample_edge_attrs =
                g.value("sample_edge_attrs", c.generator.sample_edge_attrs);
        }
        if (j.contains("estimator")) {
            const auto& e = j.at("estimator");
            c.estimator.gcn_widths = e.value("gcn_widths", c.estimator.gcn_widths);
            c.estimator.readout_widths =
                e.value("readout_widths", c.estimator.readout_widths);
            c.estimator.add_self_loops =
                e.value("add_self_loops", c.estimator.add_self_loops);
            c.estimator.profile_id = e.value("profile_id", c.estimator.profile_id);
        }
        c.estimator_checkpoint = j.value("estimator_checkpoint", c.estimator_checkpoint);
        c.generator_checkpoint = j.value("generator_checkpoint", c.generator_checkpoint);
        c.pretrain_est_epochs = j.value("pretrain_est_epochs", c.pretrain_est_epochs);
        c.pretrain_gen_epochs = j.value("pretrain_gen_epochs", c.pretrain_gen_epochs);
        c.est_finetune_epochs = j.value("est_finetune_epochs", c.est_finetune_epochs);
        c.gen_finetune_epochs = j.value("gen_finetune_epochs", c.gen_finetune_epochs);
        c.gen_finetune_subsample =
            j.value("gen_finetune_subsample", c.gen_finetune_subsample);
        c.est_lr = j.value("est_lr", c.est_lr);
        c.gen_lr = j.value("gen_lr", c.gen_lr);
        c.w_kl = j.value("w_kl", c.w_kl);
        c.w_dec = j.value("w_dec", c.w_dec);
        c.w_perf = j.value("w_perf", c.w_perf);
        c.compute_edns = j.value("compute_edns", c.compute_edns);
        if (j.contains("edns")) {
            const auto& e = j.at("edns");
            c.edns.grid.cells_per_side = e.value("grid", c.edns.grid.cells_per_side);
            c.edns.p0 = e.value("p0", c.edns.p0);
            c.edns.gamma = e.value("gamma", c.edns.gamma);
            c.edns.n_samples = e.value("n_samples", c.edns.n_samples);
            c.edns.seed = e.value("seed", c.edns.seed);
        }
        c.store_iteration_designs =
            j.value("store_iteration_designs", c.store_iteration_designs);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("pipeline config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Records CSV (round-trips exactly; doubles at 17 significant digits)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "";
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::string fmt_ids(const std::vector<std::size_t>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(ids[i]);
    }
    return out;
}

}  // namespace detail

inline constexpr const char* kRecordsHeader =
    "iteration,best_estimated_q,mean_topc_estimated,mean_topc_true,blended_ids,"
    "est_train_mse,gen_kl,gen_dec,gen_perf,edns";

inline void write_records_csv(const std::string& path,
                              const std::vector<IterationRecord>& records) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write records: " + path);
    os << kRecordsHeader << "\n";
    for (const auto& r : records) {
        os << r.iteration << ',' << detail::fmt_double(r.best_estimated_q) << ','
           << detail::fmt_double(r.mean_topc_estimated) << ','
           << detail::fmt_double(r.mean_topc_true) << ',' << detail::fmt_ids(r.blended_ids)
           << ',' << detail::fmt_double(r.est_train_mse) << ','
           << detail::fmt_double(r.gen_kl) << ',' << detail::fmt_double(r.gen_dec) << ','
           << detail::fmt_double(r.gen_perf) << ',' << detail::fmt_double(r.edns) << "\n";
    }
    if (!os) throw IoError("records write failed: " + path);
}

inline std::vector<IterationRecord> read_records_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read records: " + path);
    std::string line;
    if (!std::getline(is, line) || line != kRecordsHeader)
        throw ParseError("records csv: unexpected header in " + path);
    std::vector<IterationRecord> records;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                fields.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        fields.push_back(cur);
        if (fields.size() != 10)
            throw ParseError("records csv: wrong field count at line " +
                             std::to_string(line_no));
        auto num = [&](const std::string& s) {
            return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
        };
        IterationRecord r;
        r.iteration = static_cast<std::size_t>(std::stoull(fields[0]));
        r.best_estimated_q = num(fields[1]);
        r.mean_topc_estimated = num(fields[2]);
        r.mean_topc_true = num(fields[3]);
        if (!fields[4].empty()) {
            std::string piece;
            for (char ch : fields[4] + ";") {
                if (ch == ';') {
                    r.blended_ids.push_back(static_cast<std::size_t>(std::stoull(piece)));
                    piece.clear();
                } else {
                    piece += ch;
                }
            }
        }
        r.est_train_mse = num(fields[5]);
        r.gen_kl = num(fields[6]);
        r.gen_dec = num(fields[7]);
        r.gen_perf = num(fields[8]);
        r.edns = num(fields[9]);
        records.push_back(std::move(r));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Pipeline state and iteration
// ---------------------------------------------------------------------------

struct PipelineState {
    PipelineConfig config;
    Dataset dataset;
    EstimatorModel estimator;
    GeneratorModel generator;
    DesignGraph best_design;
    double best_label = 0.0;
    double best_estimated = 0.0;
    bool has_best_estimated = false;
    std::size_t iteration = 0;
    std::vector<DesignGraph> last_topc;  // blended designs of the latest iteration
};

namespace detail {

inline bool better(double a, double b, bool maximize) {
    return maximize ? a > b : a < b;
}

}  // namespace detail

/// The true (non-surrogate) performance metric the pipeline optimizes.
inline double true_metric(const DesignGraph& g, const PipelineConfig& cfg) {
    if (!cfg.use_combined_label) return synthetic_label(g);
    FlowResult flows = min_cost_max_flow(augment_source_sink(g));
    return combined_label(capacity_ratio(g, flows), edge_cost(g, cfg.unit_a), cfg.alpha,
                          cfg.cost_k);
}

inline double resolve_q_target(const PipelineState& st) {
    if (!std::isnan(st.config.q_target)) return st.config.q_target;
    double best = st.dataset.labels.front();
    for (double l : st.dataset.labels)
        if (detail::better(l, best, st.config.maximize)) best = l;
    return st.config.maximize ? best * st.config.q_target_factor
                              : best / st.config.q_target_factor;
}

/// One loop pass: candidates -> ascent -> decode -> screen -> relabel ->
/// blend -> fine-tune. Deterministic given (state, state.config.seed).
inline IterationRecord run_iteration(PipelineState& st) {
    const PipelineConfig& cfg = st.config;
    const std::size_t n_data = st.dataset.size();
    const std::size_t iter = ++st.iteration;
    const double q_target = resolve_q_target(st);

    // Pool of source designs for perturbed encodings: the current best rows.
    std::vector<std::size_t> order(n_data);
    for (std::size_t i = 0; i < n_data; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (st.dataset.labels[a] != st.dataset.labels[b])
            return detail::better(st.dataset.labels[a], st.dataset.labels[b], cfg.maximize);
        return a < b;
    });
    const std::size_t pool_size = std::min<std::size_t>(
        std::max<std::size_t>(cfg.top_c, 10), n_data);

    const std::size_t n_prior = static_cast<std::size_t>(
        std::llround(cfg.prior_fraction * static_cast<double>(cfg.batch)));

    std::vector<DesignGraph> candidates;
    std::vector<double> scores;
    candidates.reserve(cfg.batch + 1);

    for (std::size_t b = 0; b < cfg.batch; ++b) {
        std::uint64_t cand_seed = derive_seed(cfg.seed, 0xca4du + iter, b);
        bool produced = false;
        std::string last_problem;
        for (std::size_t attempt = 0; attempt < cfg.resample_budget && !produced; ++attempt) {
            std::uint64_t s = derive_seed(cand_seed, attempt);
            try {
                LatentCode code;
                if (b < n_prior) {
                    Rng rng(derive_seed(s, 0x9b10u));
                    std::size_t n_nodes = st.generator.sample_node_count(rng);
                    std::size_t d = st.generator.config.latent_dim;
                    std::vector<double> mu(n_nodes * d, 0.0), sigma(n_nodes * d, 1.0),
                        z(n_nodes * d);
                    for (auto& v : z) v = rng.normal();
                    code.mu = Tensor::from({n_nodes, d}, std::move(mu));
                    code.sigma = Tensor::from({n_nodes, d}, std::move(sigma));
                    code.z = Tensor::from({n_nodes, d}, std::move(z));
                    code.eps_seed = s;
                } else {
                    std::size_t src = order[b % pool_size];
                    code = encode(st.generator, st.dataset.graphs[src], s);
                }
                code = latent_ascent(st.generator, code, q_target, cfg.ascent_steps,
                                     cfg.ascent_step_size)
                           .code;
                DecodeOptions dopt;
                dopt.mode = DecodeOptions::Mode::kSample;
                dopt.seed = derive_seed(s, 0xd0deu);
                // Admit any simple graph (n + n(n-1)/2 decisions); the guard
                // still catches genuine runaway.
                dopt.step_guard_factor = code.node_count() + 2;
                DesignGraph g = decode(st.generator, code, dopt);
                if (g.edges.empty() || !validate(g).empty()) {
                    last_problem = "invalid decode";
                    continue;
                }
                // Candidates must be labelable: flow needs both endpoints.
                bool supply = false, demand = false;
                for (const auto& node : g.nodes) {
                    supply = supply || node.node_class.index == profiles::kSupply;
                    demand = demand || node.node_class.index == profiles::kDemand;
                }
                if (!supply || !demand) {
                    last_problem = "decode without supply and demand nodes";
                    continue;
                }
                candidates.push_back(std::move(g));
                produced = true;
            } catch (const Error& e) {
                last_problem = e.what();
            }
        }
        if (!produced)
            throw PipelineError("iteration " + std::to_string(iter) + ": candidate " +
                                std::to_string(b) + " exhausted its resample budget (" +
                                std::to_string(cfg.resample_budget) +
                                " attempts); last problem: " + last_problem);
    }

    // Elitism: the incumbent competes in every batch.
    candidates.push_back(st.best_design);

    scores.reserve(candidates.size());
    for (const auto& g : candidates) scores.push_back(st.estimator.estimate(g));

    std::vector<std::size_t> rank(candidates.size());
    for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = i;
    std::sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return detail::better(scores[a], scores[b], cfg.maximize);
        return a < b;
    });
    const std::size_t c = std::min<std::size_t>(cfg.top_c, rank.size());

    double best_batch_estimate = scores[rank[0]];
    if (!st.has_best_estimated ||
        detail::better(best_batch_estimate, st.best_estimated, cfg.maximize)) {
        st.best_estimated = best_batch_estimate;
        st.has_best_estimated = true;
    }

    IterationRecord rec;
    rec.iteration = iter;
    rec.best_estimated_q = st.best_estimated;

    // Relabel the screen's picks with the true metric.
    std::vector<DesignGraph> top_designs;
    std::vector<double> top_labels;
    double est_sum = 0.0, true_sum = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
        const DesignGraph& g = candidates[rank[i]];
        double label = true_metric(g, cfg);
        est_sum += scores[rank[i]];
        true_sum += label;
        top_designs.push_back(g);
        top_labels.push_back(label);
        if (detail::better(label, st.best_label, cfg.maximize)) {
            st.best_label = label;
            st.best_design = g;
        }
    }
    rec.mean_topc_estimated = est_sum / static_cast<double>(c);
    rec.mean_topc_true = true_sum / static_cast<double>(c);
    st.last_topc = top_designs;

    // Blend: the c worst-labeled rows make way, worst first.
    std::vector<std::size_t> worst(order.rbegin(), order.rend());
    for (std::size_t i = 0; i < c; ++i) {
        std::size_t row = worst[i];
        st.dataset.graphs[row] = top_designs[i];
        st.dataset.labels[row] = top_labels[i];
        rec.blended_ids.push_back(row);
    }

    // Fine-tune both models on the refreshed dataset.
    if (cfg.est_finetune_epochs > 0) {
        EstimatorTrainOptions eopt;
        eopt.epochs = cfg.est_finetune_epochs;
        eopt.rule = OptimizerRule::adam(cfg.est_lr);
        eopt.seed = derive_seed(cfg.seed, 0xe577u, iter);
        EstimatorHistory h = train_estimator(st.estimator, st.dataset, eopt);
        rec.est_train_mse = h.train_mse.back();
    }
    if (cfg.gen_finetune_epochs > 0) {
        GeneratorTrainOptions gopt;
        gopt.epochs = cfg.gen_finetune_epochs;
        gopt.w_kl = cfg.w_kl;
        gopt.w_dec = cfg.w_dec;
        gopt.w_perf = cfg.w_perf;
        gopt.rule = OptimizerRule::adam(cfg.gen_lr);
        gopt.seed = derive_seed(cfg.seed, 0x6e77u, iter);
        gopt.subsample = cfg.gen_finetune_subsample;
        GeneratorHistory h =
            train_generator(st.generator, st.dataset.graphs, st.dataset.labels, gopt);
        rec.gen_kl = h.kl.back();
        rec.gen_dec = h.dec.back();
        rec.gen_perf = h.perf.back();
    }

    if (cfg.compute_edns) {
        EdnsConfig ecfg = cfg.edns;
        ecfg.seed = derive_seed(cfg.seed, 0xed00u);  // matched across iterations
        rec.edns = edns(st.best_design, ecfg).edns;
    }
    return rec;
}

// ---------------------------------------------------------------------------
// Full runs
// ---------------------------------------------------------------------------

struct RunResult {
    std::string dir;
    std::vector<IterationRecord> records;
    double best_label = 0.0;
    bool converged = false;
};

/// Dataset, models, and incumbent as run_pipeline prepares them; callers that
/// drive run_iteration themselves start from here.
inline PipelineState init_pipeline_state(const PipelineConfig& config) {
    config.validate();
    PipelineState st;
    st.config = config;

    if (!config.dataset_path.empty()) {
        st.dataset = dataset_from_labeled(read_dataset_file(config.dataset_path),
                                          config.synth);
    } else {
        SynthConfig synth = config.synth;
        if (synth.seed == 0) synth.seed = derive_seed(config.seed, 0xda7au);
        st.dataset = build_dataset(config.synth_count, synth);
    }
    if (st.dataset.size() < 2) throw ConfigError("pipeline: dataset too small");

    if (!config.estimator_checkpoint.empty()) {
        st.estimator = EstimatorModel::load(config.estimator_checkpoint);
    } else {
        EstimatorConfig ecfg = config.estimator;
        ecfg.maximize = config.maximize;
        st.estimator = EstimatorModel::init(ecfg, derive_seed(config.seed, 0x1e57u));
        EstimatorTrainOptions eopt;
        eopt.epochs = config.pretrain_est_epochs;
        eopt.rule = OptimizerRule::adam(config.est_lr);
        eopt.seed = derive_seed(config.seed, 0x1e58u);
        train_estimator(st.estimator, st.dataset, eopt);
    }
    if (!config.generator_checkpoint.empty()) {
        st.generator = GeneratorModel::load(config.generator_checkpoint);
    } else {
        st.generator = GeneratorModel::init(config.generator, derive_seed(config.seed, 0x6e30u));
        GeneratorTrainOptions gopt;
        gopt.epochs = config.pretrain_gen_epochs;
        gopt.w_kl = config.w_kl;
        gopt.w_dec = config.w_dec;
        gopt.w_perf = config.w_perf;
        gopt.rule = OptimizerRule::adam(config.gen_lr);
        gopt.seed = derive_seed(config.seed, 0x6e31u);
        train_generator(st.generator, st.dataset.graphs, st.dataset.labels, gopt);
    }

    // Incumbent: the best row of the initial dataset.
    std::size_t best_row = 0;
    for (std::size_t i = 1; i < st.dataset.size(); ++i)
        if (detail::better(st.dataset.labels[i], st.dataset.labels[best_row],
                           config.maximize))
            best_row = i;
    st.best_design = st.dataset.graphs[best_row];
    st.best_label = st.dataset.labels[best_row];
    return st;
}

/// Prepares models and dataset, iterates to convergence or the iteration cap,
/// and writes records.csv, report.json, design files, and checkpoints into
/// out_dir. File contents carry no timestamps, so reruns are bit-identical.
inline RunResult run_pipeline(const PipelineConfig& config, const std::string& out_dir) {
    namespace fs = std::filesystem;
    PipelineState st = init_pipeline_state(config);
    fs::create_directories(fs::path(out_dir) / "designs");
    {
        std::ofstream os(fs::path(out_dir) / "config.json");
        os << pipeline_config_to_json(config).dump(2) << "\n";
    }

    RunResult result;
    result.dir = out_dir;
    double prev_best = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t t = 1; t <= config.max_iterations; ++t) {
        IterationRecord rec = run_iteration(st);
        result.records.push_back(rec);
        write_records_csv((fs::path(out_dir) / "records.csv").string(), result.records);
        if (config.store_iteration_designs) {
            for (std::size_t i = 0; i < st.last_topc.size(); ++i) {
                std::ostringstream name;
                name << "iter_" << std::setfill('0') << std::setw(4) << t << "_top_"
                     << (i + 1) << ".json";
                write_graph_file((fs::path(out_dir) / "designs" / name.str()).string(),
                                 st.last_topc[i]);
            }
        }
        if (!std::isnan(prev_best) &&
            std::fabs(rec.best_estimated_q - prev_best) < config.epsilon) {
            result.converged = true;
            break;
        }
        prev_best = rec.best_estimated_q;
    }
    result.best_label = st.best_label;

    write_graph_file((fs::path(out_dir) / "designs" / "best.json").string(),
                     st.best_design);
    nlohmann::json manifest = nlohmann::json::array();
    manifest.push_back({{"file", "designs/best.json"},
                        {"label", st.best_label},
                        {"source", "incumbent"}});
    for (std::size_t i = 0; i < st.last_topc.size(); ++i) {
        std::string name = "final_top_" + std::to_string(i + 1) + ".json";
        write_graph_file((fs::path(out_dir) / "designs" / name).string(), st.last_topc[i]);
        manifest.push_back({{"file", "designs/" + name},
                            {"label", true_metric(st.last_topc[i], config)},
                            {"source", "final-top"}});
    }
    st.estimator.save((fs::path(out_dir) / "estimator.ckpt").string());
    st.generator.save((fs::path(out_dir) / "generator.ckpt").string());

    nlohmann::json report{{"schema_version", 1},
                          {"iterations", result.records.size()},
                          {"converged", result.converged},
                          {"best_label", st.best_label},
                          {"best_estimated_q", st.best_estimated},
                          {"objective", config.maximize ? "maximize" : "minimize"},
                          {"designs", manifest}};
    {
        std::ofstream os(fs::path(out_dir) / "report.json");
        os << report.dump(2) << "\n";
        if (!os) throw IoError("report write failed");
    }
    return result;
}

// ---------------------------------------------------------------------------
// Post-processing
// ---------------------------------------------------------------------------

struct PostProcessRow {
    std::string file;
    double label = 0.0;
    double edns_value = 0.0;
    double edns_std_error = 0.0;
};

/// EDNS for every retained design of a completed run, on matched event seeds,
/// ranked best (smallest EDNS) first. Writes post_process.csv in the run
/// directory; per-design failures are recorded, not fatal.
inline std::vector<PostProcessRow> post_process(const std::string& run_dir,
                                                const EdnsConfig& edns_cfg) {
    namespace fs = std::filesystem;
    std::ifstream is(fs::path(run_dir) / "report.json");
    if (!is) throw IoError("post_process: no report.json in " + run_dir);
    nlohmann::json report;
    try {
        is >> report;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("report.json: ") + e.what());
    }

    std::vector<PostProcessRow> rows;
    std::vector<std::string> failures;
    for (const auto& entry : report.at("designs")) {
        PostProcessRow row;
        row.file = entry.at("file").get<std::string>();
        row.label = entry.at("label").get<double>();
        try {
            DesignGraph g = read_graph_file((fs::path(run_dir) / row.file).string());
            EdnsEstimate est = edns(g, edns_cfg);
            row.edns_value = est.edns;
            row.edns_std_error = est.std_error;
            rows.push_back(std::move(row));
        } catch (const Error& e) {
            failures.push_back(row.file + ": " + e.what());
        }
    }
    std::sort(rows.begin(), rows.end(), [](const PostProcessRow& a, const PostProcessRow& b) {
        if (a.edns_value != b.edns_value) return a.edns_value < b.edns_value;
        return a.file < b.file;
    });

    std::ofstream os(fs::path(run_dir) / "post_process.csv");
    if (!os) throw IoError("post_process: cannot write csv");
    os << "file,label,edns,edns_std_error\n";
    for (const auto& r : rows)
        os << r.file << ',' << detail::fmt_double(r.label) << ','
           << detail::fmt_double(r.edns_value) << ','
           << detail::fmt_double(r.edns_std_error) << "\n";
    for (const auto& f : failures) os << "# failed: " << f << "\n";
    return rows;
}

}  // namespace resgen
