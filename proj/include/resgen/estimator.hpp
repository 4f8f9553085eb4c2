#pragma once

// GCN surrogate: normalized-adjacency propagation, mean-pool readout MLP,
// MSE training with a validation split and best-epoch retention. Labels are
// standardized internally; estimates come back in raw label units.

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "resgen/errors.hpp"
#include "resgen/graph.hpp"
#include "resgen/matrix.hpp"
#include "resgen/nn.hpp"
#include "resgen/rng.hpp"
#include "resgen/synthgen.hpp"
#include "resgen/tensor.hpp"

namespace resgen {

/// D^{-1/2} A D^{-1/2} with the zero-degree convention D_ii^{-1/2} = 0.
/// Self-loops are NOT added unless requested; an isolated node then
/// propagates zeros.
inline Matrix normalized_operator(const WeightedAdjacency& adj, bool add_self_loops = false) {
    Matrix a = adj.values;
    if (add_self_loops)
        for (std::size_t i = 0; i < a.rows(); ++i) a(i, i) += 1.0;
    std::vector<double> dinv(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) d += a(i, j);
        dinv[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
    }
    Matrix s(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            s(i, j) = dinv[i] * a(i, j) * dinv[j];
    return s;
}

/// act(D^{-1/2} A D^{-1/2} X theta) for one propagation layer.
inline Tensor gcn_layer(const WeightedAdjacency& adj, const DegreeMatrix& deg,
                        const Tensor& x, const Tensor& theta,
                        Activation act = Activation::kRelu) {
    if (adj.values.rows() != deg.values.rows())
        throw ShapeError("gcn_layer: adjacency and degree matrices disagree");
    Matrix s = normalized_operator(adj, false);
    return apply_activation(matmul(matmul_const(s, x), theta), act);
}

struct EstimatorConfig {
    std::vector<std::size_t> gcn_widths = {6, 32, 32};   // first entry = feature count
    std::vector<std::size_t> readout_widths = {32, 16, 1};
    bool add_self_loops = false;
    bool maximize = true;  // objective direction of the labels this model learns
    std::string profile_id = "synthetic";

    void validate() const {
        if (gcn_widths.size() < 2) throw ConfigError("estimator: need >= 1 GCN layer");
        if (readout_widths.size() < 2 || readout_widths.back() != 1)
            throw ConfigError("estimator: readout must end in width 1");
        if (readout_widths.front() != gcn_widths.back())
            throw ConfigError("estimator: readout input width must match last GCN width");
    }
};

class EstimatorModel {
public:
    EstimatorConfig config;
    ParamSet params;
    double label_mean = 0.0;
    double label_std = 1.0;

    static EstimatorModel init(EstimatorConfig cfg, std::uint64_t seed) {
        cfg.validate();
        EstimatorModel m;
        m.config = std::move(cfg);
        Rng rng(derive_seed(seed, 0xe57u));
        for (std::size_t l = 0; l + 1 < m.config.gcn_widths.size(); ++l) {
            std::size_t in = m.config.gcn_widths[l], out = m.config.gcn_widths[l + 1];
            m.params.add("gcn.w" + std::to_string(l), {in, out},
                         glorot_uniform(in, out, rng));
        }
        init_mlp(m.params, "readout", m.readout_spec(), rng);
        return m;
    }

    MlpSpec readout_spec() const {
        return MlpSpec(config.readout_widths, Activation::kRelu, Activation::kIdentity);
    }

    /// Standardized-scale prediction for a precomputed propagation operator
    /// and feature matrix; recorded on the tape for training.
    Tensor forward(const std::shared_ptr<const Matrix>& s, const Matrix& x) const {
        Tensor h = Tensor::from(x);
        for (std::size_t l = 0; l + 1 < config.gcn_widths.size(); ++l)
            h = relu(matmul(matmul_const(s, h), params.at("gcn.w" + std::to_string(l))));
        return mlp_forward(readout_spec(), params, "readout", rows_mean(h));
    }

    std::shared_ptr<const Matrix> propagation_operator(const DesignGraph& g) const {
        return std::make_shared<const Matrix>(
            normalized_operator(adjacency(g), config.add_self_loops));
    }

    /// Raw-label-units estimate; pure and tape-free.
    double estimate(const DesignGraph& g) const {
        if (g.nodes.empty()) throw DomainError("estimator: graph has no nodes");
        if (g.profile_id != config.profile_id)
            throw ConfigError("estimator: graph profile '" + g.profile_id +
                              "' does not match model profile '" + config.profile_id + "'");
        NoGradGuard guard;
        Tensor q = forward(propagation_operator(g), feature_matrix(g).values);
        return q.item() * label_std + label_mean;
    }

    void save(const std::string& path) const {
        nlohmann::json meta{{"kind", "estimator"},
                            {"gcn_widths", config.gcn_widths},
                            {"readout_widths", config.readout_widths},
                            {"add_self_loops", config.add_self_loops},
                            {"maximize", config.maximize},
                            {"profile_id", config.profile_id},
                            {"label_mean", label_mean},
                            {"label_std", label_std}};
        save_checkpoint(path, params, meta.dump());
    }

    static EstimatorModel load(const std::string& path) {
        Checkpoint ck = load_checkpoint(path);
        nlohmann::json meta;
        try {
            meta = nlohmann::json::parse(ck.metadata);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("estimator checkpoint metadata: ") + e.what());
        }
        if (meta.value("kind", "") != "estimator")
            throw ParseError("checkpoint is not an estimator model");
        EstimatorModel m;
        m.config.gcn_widths = meta.at("gcn_widths").get<std::vector<std::size_t>>();
        m.config.readout_widths = meta.at("readout_widths").get<std::vector<std::size_t>>();
        m.config.add_self_loops = meta.at("add_self_loops").get<bool>();
        m.config.maximize = meta.at("maximize").get<bool>();
        m.config.profile_id = meta.at("profile_id").get<std::string>();
        m.label_mean = meta.at("label_mean").get<double>();
        m.label_std = meta.at("label_std").get<double>();
        m.config.validate();
        m.params = std::move(ck.params);
        return m;
    }
};

struct EstimatorHistory {
    std::vector<double> train_mse;  // raw label units, per epoch
    std::vector<double> val_mse;
    std::size_t best_epoch = 0;  // 1-based
    double best_val = 0.0;
};

struct EstimatorTrainOptions {
    double split = 0.9;  // training fraction
    std::size_t epochs = 40;
    std::size_t batch_size = 32;
    OptimizerRule rule = OptimizerRule::adam(3e-3);
    std::uint64_t seed = 0;
    bool standardize_labels = true;  // freeze mean/std from the train split
};

/// Minimizes MSE on the training split; retains the best-validation epoch's
/// parameters. History is reported in raw label units.
inline EstimatorHistory train_estimator(EstimatorModel& model,
                                        const std::vector<DesignGraph>& graphs,
                                        const std::vector<double>& labels,
                                        const EstimatorTrainOptions& opt) {
    if (graphs.size() != labels.size()) throw ShapeError("train_estimator: label count");
    if (graphs.size() < 2) throw ConfigError("train_estimator: need >= 2 samples");
    if (!(opt.split > 0.0 && opt.split < 1.0))
        throw ConfigError("train_estimator: split must be in (0,1)");
    if (opt.epochs < 1) throw ConfigError("train_estimator: epochs must be >= 1");

    struct Item {
        std::shared_ptr<const Matrix> s;
        Matrix x;
        double y = 0.0;
    };
    std::vector<Item> items;
    items.reserve(graphs.size());
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        if (graphs[i].profile_id != model.config.profile_id)
            throw ConfigError("train_estimator: graph profile mismatch at index " +
                              std::to_string(i));
        items.push_back(
            {model.propagation_operator(graphs[i]), feature_matrix(graphs[i]).values, 0.0});
    }

    Rng rng(derive_seed(opt.seed, 0x7e57u));
    std::vector<std::size_t> order(graphs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::size_t n_train = static_cast<std::size_t>(
        std::round(opt.split * static_cast<double>(order.size())));
    n_train = std::min(std::max<std::size_t>(n_train, 1), order.size() - 1);
    std::vector<std::size_t> train_idx(order.begin(), order.begin() + n_train);
    std::vector<std::size_t> val_idx(order.begin() + n_train, order.end());

    if (opt.standardize_labels) {
        double mean = 0.0;
        for (auto i : train_idx) mean += labels[i];
        mean /= static_cast<double>(train_idx.size());
        double var = 0.0;
        for (auto i : train_idx) var += (labels[i] - mean) * (labels[i] - mean);
        var /= static_cast<double>(train_idx.size());
        model.label_mean = mean;
        model.label_std = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    for (std::size_t i = 0; i < items.size(); ++i)
        items[i].y = (labels[i] - model.label_mean) / model.label_std;

    const double raw_scale = model.label_std * model.label_std;
    auto eval_mse = [&](const std::vector<std::size_t>& idx) {
        NoGradGuard guard;
        double total = 0.0;
        for (auto i : idx) {
            double diff = model.forward(items[i].s, items[i].x).item() - items[i].y;
            total += diff * diff;
        }
        return total / static_cast<double>(idx.size()) * raw_scale;
    };

    EstimatorHistory history;
    Optimizer optimizer(opt.rule);
    ParamSet best = model.params.clone_values();
    double best_val = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
        rng.shuffle(train_idx);
        double epoch_sq = 0.0;
        for (std::size_t start = 0; start < train_idx.size(); start += opt.batch_size) {
            std::size_t end = std::min(start + opt.batch_size, train_idx.size());
            std::vector<Tensor> preds;
            std::vector<double> targets;
            preds.reserve(end - start);
            for (std::size_t b = start; b < end; ++b) {
                const Item& it = items[train_idx[b]];
                preds.push_back(model.forward(it.s, it.x));
                targets.push_back(it.y);
            }
            Tensor batch_pred = vstack(preds);
            Tensor loss = mse(batch_pred, Tensor::from({preds.size(), 1}, targets));
            if (!std::isfinite(loss.item()))
                throw TrainingError("estimator training diverged at epoch " +
                                    std::to_string(epoch));
            epoch_sq += loss.item() * static_cast<double>(end - start);
            model.params.zero_grad();
            loss.backward();
            optimizer.step(model.params);
        }
        history.train_mse.push_back(epoch_sq / static_cast<double>(train_idx.size()) *
                                    raw_scale);
        double val = eval_mse(val_idx);
        history.val_mse.push_back(val);
        if (val < best_val) {
            best_val = val;
            best = model.params.clone_values();
            history.best_epoch = epoch;
        }
    }
    model.params.load_values(best);
    history.best_val = best_val;
    return history;
}

inline EstimatorHistory train_estimator(EstimatorModel& model, const Dataset& ds,
                                        const EstimatorTrainOptions& opt) {
    return train_estimator(model, ds.graphs, ds.labels, opt);
}

}  // namespace resgen
