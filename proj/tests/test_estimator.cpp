#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <vector>

#include "resgen/estimator.hpp"
#include "resgen/synthgen.hpp"

using namespace resgen;

namespace {

DesignGraph pair_graph(double cap = 4.0) {
    DesignGraph g;
    g.nodes.push_back({0, {profiles::kSupply}, 10.0, 0.2, 0.2});
    g.nodes.push_back({1, {profiles::kDemand}, 3.0, 0.8, 0.8});
    g.edges.push_back({0, 1, 1, cap, 1.0});
    return g;
}

Dataset small_dataset(std::size_t count, std::size_t n, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.n = n;
    cfg.k = 2;
    cfg.p_rewire = 0.3;
    cfg.seed = seed;
    return build_dataset(count, cfg);
}

DesignGraph permuted(const DesignGraph& g, const std::vector<int>& perm) {
    // perm[new_index] = old_index
    std::vector<int> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
    DesignGraph out;
    out.profile_id = g.profile_id;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        NodeAttr n = g.nodes[perm[i]];
        n.id = static_cast<int>(i);
        out.nodes.push_back(n);
    }
    for (EdgeAttr e : g.edges) {
        e.u = inv[e.u];
        e.v = inv[e.v];
        out.edges.push_back(e);
    }
    return out;
}

}  // namespace

TEST_CASE("normalized operator matches hand-computed values") {
    SECTION("single isolated node") {
        DesignGraph g;
        g.nodes.push_back({0, {profiles::kSupply}, 10.0, 0.5, 0.5});
        Matrix s = normalized_operator(adjacency(g), false);
        REQUIRE(s.rows() == 1);
        REQUIRE(s(0, 0) == 0.0);
        Matrix sl = normalized_operator(adjacency(g), true);
        REQUIRE(sl(0, 0) == 1.0);
    }

    SECTION("weighted pair normalizes to 1") {
        Matrix s = normalized_operator(adjacency(pair_graph(2.0)), false);
        REQUIRE(s(0, 0) == 0.0);
        REQUIRE_THAT(s(0, 1), Catch::Matchers::WithinAbs(1.0, 1e-15));
        REQUIRE_THAT(s(1, 0), Catch::Matchers::WithinAbs(1.0, 1e-15));
    }

    SECTION("path with unit capacities") {
        DesignGraph g;
        g.nodes.push_back({0, {profiles::kSupply}, 10.0, 0.1, 0.1});
        g.nodes.push_back({1, {profiles::kTransfer}, 0.0, 0.5, 0.5});
        g.nodes.push_back({2, {profiles::kDemand}, 3.0, 0.9, 0.9});
        g.edges.push_back({0, 1, 0, 1.0, 1.0});
        g.edges.push_back({1, 2, 0, 1.0, 1.0});
        Matrix s = normalized_operator(adjacency(g), false);
        const double r = 1.0 / std::sqrt(2.0);
        REQUIRE_THAT(s(0, 1), Catch::Matchers::WithinAbs(r, 1e-15));
        REQUIRE_THAT(s(1, 0), Catch::Matchers::WithinAbs(r, 1e-15));
        REQUIRE_THAT(s(1, 2), Catch::Matchers::WithinAbs(r, 1e-15));
        REQUIRE(s(0, 2) == 0.0);
        REQUIRE(s(0, 0) == 0.0);
        REQUIRE(s(1, 1) == 0.0);
    }

    SECTION("zero-degree row stays zero") {
        DesignGraph g = pair_graph();
        g.nodes.push_back({2, {profiles::kTransfer}, 0.0, 0.5, 0.5});
        Matrix s = normalized_operator(adjacency(g), false);
        for (std::size_t j = 0; j < 3; ++j) {
            REQUIRE(s(2, j) == 0.0);
            REQUIRE(s(j, 2) == 0.0);
        }
    }
}

TEST_CASE("gcn layer applies the propagation rule") {
    DesignGraph g = pair_graph(1.0);
    WeightedAdjacency adj = adjacency(g);
    DegreeMatrix deg = degree(adj);

    Tensor x = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor theta = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});

    SECTION("identity feature and weight reproduce the operator") {
        Tensor h = gcn_layer(adj, deg, x, theta);
        REQUIRE_THAT(h.at(0, 1), Catch::Matchers::WithinAbs(1.0, 1e-15));
        REQUIRE_THAT(h.at(1, 0), Catch::Matchers::WithinAbs(1.0, 1e-15));
        REQUIRE(h.at(0, 0) == 0.0);
        REQUIRE(h.at(1, 1) == 0.0);
    }

    SECTION("relu clamps negative responses") {
        Tensor neg = Tensor::from({2, 2}, {-1.0, 0.0, 0.0, -1.0});
        Tensor h = gcn_layer(adj, deg, x, neg);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) REQUIRE(h.at(i, j) == 0.0);
    }

    SECTION("mismatched degree matrix is rejected") {
        DegreeMatrix wrong{Matrix(3, 3)};
        REQUIRE_THROWS_AS(gcn_layer(adj, wrong, x, theta), ShapeError);
    }
}

TEST_CASE("estimator config validation") {
    EstimatorConfig cfg;
    REQUIRE_NOTHROW(cfg.validate());
    REQUIRE(cfg.gcn_widths == std::vector<std::size_t>{6, 32, 32});
    REQUIRE(cfg.readout_widths == std::vector<std::size_t>{32, 16, 1});
    REQUIRE_FALSE(cfg.add_self_loops);

    EstimatorConfig bad = cfg;
    bad.gcn_widths = {6};
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);

    bad = cfg;
    bad.readout_widths = {32, 16, 2};
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);

    bad = cfg;
    bad.readout_widths = {16, 16, 1};
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("estimator init shapes and determinism") {
    EstimatorModel a = EstimatorModel::init({}, 7);
    REQUIRE(a.params.at("gcn.w0").shape() == std::vector<std::size_t>{6, 32});
    REQUIRE(a.params.at("gcn.w1").shape() == std::vector<std::size_t>{32, 32});
    REQUIRE(a.params.at("readout.w0").shape() == std::vector<std::size_t>{32, 16});
    REQUIRE(a.params.at("readout.w1").shape() == std::vector<std::size_t>{16, 1});

    EstimatorModel b = EstimatorModel::init({}, 7);
    EstimatorModel c = EstimatorModel::init({}, 8);
    REQUIRE(a.params.at("gcn.w0").values() == b.params.at("gcn.w0").values());
    REQUIRE(a.params.at("gcn.w0").values() != c.params.at("gcn.w0").values());
}

TEST_CASE("estimate enforces the graph profile") {
    EstimatorModel m = EstimatorModel::init({}, 1);
    DesignGraph g = pair_graph();
    g.profile_id = "unknown";
    REQUIRE_THROWS_AS(m.estimate(g), ConfigError);
    REQUIRE_THROWS_AS(m.estimate(DesignGraph{}), DomainError);
}

TEST_CASE("zero-degree convention makes isolated graphs magnitude-blind") {
    // Without self-loops a single node propagates zeros, so the estimate
    // collapses to the readout's response at the origin.
    EstimatorModel m = EstimatorModel::init({}, 3);
    DesignGraph a;
    a.nodes.push_back({0, {profiles::kSupply}, 6.0, 0.5, 0.5});
    DesignGraph b;
    b.nodes.push_back({0, {profiles::kDemand}, 2.0, 0.1, 0.9});
    REQUIRE(m.estimate(a) == m.estimate(b));

    EstimatorConfig loops;
    loops.add_self_loops = true;
    EstimatorModel ml = EstimatorModel::init(loops, 3);
    REQUIRE(ml.estimate(a) != ml.estimate(b));
}

TEST_CASE("estimate is invariant to node relabeling") {
    Dataset ds = small_dataset(4, 12, 0x5eedu);
    EstimatorModel m = EstimatorModel::init({}, 11);
    for (const auto& g : ds.graphs) {
        std::vector<int> perm(g.nodes.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::reverse(perm.begin(), perm.end());
        double base = m.estimate(g);
        REQUIRE_THAT(m.estimate(permuted(g, perm)),
                     Catch::Matchers::WithinAbs(base, 1e-9));

        Rng rng(99);
        rng.shuffle(perm);
        REQUIRE_THAT(m.estimate(permuted(g, perm)),
                     Catch::Matchers::WithinAbs(base, 1e-9));
    }
}

TEST_CASE("train_estimator rejects malformed inputs") {
    Dataset ds = small_dataset(4, 10, 1);
    EstimatorModel m = EstimatorModel::init({}, 1);
    EstimatorTrainOptions opt;
    opt.epochs = 1;

    std::vector<double> short_labels(ds.labels.begin(), ds.labels.end() - 1);
    REQUIRE_THROWS_AS(train_estimator(m, ds.graphs, short_labels, opt), ShapeError);

    std::vector<DesignGraph> one(ds.graphs.begin(), ds.graphs.begin() + 1);
    std::vector<double> one_label{ds.labels[0]};
    REQUIRE_THROWS_AS(train_estimator(m, one, one_label, opt), ConfigError);

    EstimatorTrainOptions bad = opt;
    bad.split = 1.0;
    REQUIRE_THROWS_AS(train_estimator(m, ds, bad), ConfigError);
    bad.split = 0.0;
    REQUIRE_THROWS_AS(train_estimator(m, ds, bad), ConfigError);

    bad = opt;
    bad.epochs = 0;
    REQUIRE_THROWS_AS(train_estimator(m, ds, bad), ConfigError);

    Dataset mixed = ds;
    mixed.graphs[2].profile_id = "other";
    REQUIRE_THROWS_AS(train_estimator(m, mixed, opt), ConfigError);
}

TEST_CASE("training histories follow the retention contract") {
    Dataset ds = small_dataset(30, 10, 0xabcu);
    EstimatorConfig cfg;
    cfg.gcn_widths = {6, 12};
    cfg.readout_widths = {12, 1};
    EstimatorModel m = EstimatorModel::init(cfg, 5);

    EstimatorTrainOptions opt;
    opt.epochs = 12;
    opt.batch_size = 8;
    opt.seed = 21;
    EstimatorHistory h = train_estimator(m, ds, opt);

    REQUIRE(h.train_mse.size() == opt.epochs);
    REQUIRE(h.val_mse.size() == opt.epochs);
    for (double v : h.train_mse) REQUIRE(std::isfinite(v));
    for (double v : h.val_mse) REQUIRE(std::isfinite(v));

    double min_val = *std::min_element(h.val_mse.begin(), h.val_mse.end());
    REQUIRE(h.best_val == min_val);
    REQUIRE(h.best_epoch >= 1);
    REQUIRE(h.best_epoch <= opt.epochs);
    REQUIRE(h.val_mse[h.best_epoch - 1] == h.best_val);
    // First occurrence wins on ties.
    for (std::size_t e = 0; e + 1 < h.best_epoch; ++e)
        REQUIRE(h.val_mse[e] > h.best_val);
}

TEST_CASE("retained parameters are the best-validation epoch's") {
    // A second run truncated at the first run's best epoch must land on the
    // same retained parameters: identical estimates everywhere.
    Dataset ds = small_dataset(30, 10, 0xf00du);
    EstimatorConfig cfg;
    cfg.gcn_widths = {6, 12};
    cfg.readout_widths = {12, 1};

    EstimatorTrainOptions opt;
    opt.epochs = 15;
    opt.batch_size = 8;
    opt.seed = 4;

    EstimatorModel full = EstimatorModel::init(cfg, 9);
    EstimatorHistory h = train_estimator(full, ds, opt);

    EstimatorTrainOptions truncated = opt;
    truncated.epochs = h.best_epoch;
    EstimatorModel cut = EstimatorModel::init(cfg, 9);
    EstimatorHistory hc = train_estimator(cut, ds, truncated);
    REQUIRE(hc.best_epoch == h.best_epoch);

    Dataset probe = small_dataset(5, 10, 0x9999u);
    for (const auto& g : probe.graphs) REQUIRE(full.estimate(g) == cut.estimate(g));
}

TEST_CASE("training reduces error on a learnable signal") {
    Dataset ds = small_dataset(60, 12, 0x51u);
    EstimatorConfig cfg;
    cfg.gcn_widths = {6, 16, 16};
    cfg.readout_widths = {16, 8, 1};
    EstimatorModel m = EstimatorModel::init(cfg, 2);

    EstimatorTrainOptions opt;
    opt.epochs = 60;
    opt.batch_size = 16;
    opt.seed = 3;
    opt.rule = OptimizerRule::adam(1e-2);
    EstimatorHistory h = train_estimator(m, ds, opt);

    REQUIRE(h.train_mse.back() < 0.6 * h.train_mse.front());
    REQUIRE(h.best_val <= h.val_mse.front());
}

TEST_CASE("constant labels standardize safely and drive MSE down") {
    Dataset ds = small_dataset(16, 8, 0x77u);
    std::vector<double> flat(ds.labels.size(), 4.2);

    EstimatorConfig cfg;
    cfg.gcn_widths = {6, 8};
    cfg.readout_widths = {8, 1};
    EstimatorModel m = EstimatorModel::init(cfg, 6);

    EstimatorTrainOptions opt;
    opt.epochs = 50;
    opt.batch_size = 8;
    opt.seed = 12;
    opt.rule = OptimizerRule::adam(1e-2);
    EstimatorHistory h = train_estimator(m, ds.graphs, flat, opt);

    REQUIRE_THAT(m.label_mean, Catch::Matchers::WithinAbs(4.2, 1e-12));
    REQUIRE(m.label_std == 1.0);  // zero-variance guard
    REQUIRE(h.train_mse.back() < h.train_mse.front());
    REQUIRE(h.train_mse.back() < 0.1);
    REQUIRE_THAT(m.estimate(ds.graphs[0]), Catch::Matchers::WithinAbs(4.2, 0.5));
}

TEST_CASE("training is deterministic in the option seed") {
    Dataset ds = small_dataset(20, 10, 0x11u);
    EstimatorConfig cfg;
    cfg.gcn_widths = {6, 8};
    cfg.readout_widths = {8, 1};
    EstimatorTrainOptions opt;
    opt.epochs = 6;
    opt.seed = 5;

    EstimatorModel a = EstimatorModel::init(cfg, 1);
    EstimatorModel b = EstimatorModel::init(cfg, 1);
    EstimatorHistory ha = train_estimator(a, ds, opt);
    EstimatorHistory hb = train_estimator(b, ds, opt);
    REQUIRE(ha.train_mse == hb.train_mse);
    REQUIRE(ha.val_mse == hb.val_mse);
    REQUIRE(a.estimate(ds.graphs[0]) == b.estimate(ds.graphs[0]));

    EstimatorModel c = EstimatorModel::init(cfg, 1);
    EstimatorTrainOptions other = opt;
    other.seed = 6;
    EstimatorHistory hc = train_estimator(c, ds, other);
    REQUIRE(ha.train_mse != hc.train_mse);
}

TEST_CASE("estimator checkpoints round-trip") {
    Dataset ds = small_dataset(12, 10, 0x31u);
    EstimatorConfig cfg;
    cfg.gcn_widths = {6, 8};
    cfg.readout_widths = {8, 1};
    cfg.add_self_loops = true;
    cfg.maximize = false;
    EstimatorModel m = EstimatorModel::init(cfg, 8);
    EstimatorTrainOptions opt;
    opt.epochs = 4;
    train_estimator(m, ds, opt);

    const std::string path = "/tmp/resgen_test_estimator.ckpt";
    m.save(path);
    EstimatorModel r = EstimatorModel::load(path);
    REQUIRE(r.config.gcn_widths == cfg.gcn_widths);
    REQUIRE(r.config.readout_widths == cfg.readout_widths);
    REQUIRE(r.config.add_self_loops);
    REQUIRE_FALSE(r.config.maximize);
    REQUIRE(r.label_mean == m.label_mean);
    REQUIRE(r.label_std == m.label_std);
    for (const auto& g : ds.graphs) REQUIRE(r.estimate(g) == m.estimate(g));
    std::remove(path.c_str());
}

TEST_CASE("loading a foreign checkpoint fails") {
    const std::string path = "/tmp/resgen_test_estimator_foreign.ckpt";
    ParamSet p;
    p.add("w", {1, 1}, {2.0});
    save_checkpoint(path, p, nlohmann::json{{"kind", "other"}}.dump());
    REQUIRE_THROWS_AS(EstimatorModel::load(path), ParseError);
    std::remove(path.c_str());
}

TEST_CASE("estimator loss gradients match finite differences") {
    Dataset ds = small_dataset(3, 8, 0x61u);
    EstimatorConfig cfg;
    cfg.gcn_widths = {6, 4};
    cfg.readout_widths = {4, 1};
    EstimatorModel m = EstimatorModel::init(cfg, 13);

    std::vector<std::shared_ptr<const Matrix>> ops;
    std::vector<Matrix> feats;
    for (const auto& g : ds.graphs) {
        ops.push_back(m.propagation_operator(g));
        feats.push_back(feature_matrix(g).values);
    }
    Tensor target = Tensor::from({3, 1}, {0.3, -0.4, 1.1});

    auto loss_fn = [&]() {
        std::vector<Tensor> preds;
        for (std::size_t i = 0; i < ops.size(); ++i)
            preds.push_back(m.forward(ops[i], feats[i]));
        return mse(vstack(preds), target);
    };
    auto report = gradient_check(loss_fn, m.params, 1e-6);
    INFO(report.worst_parameter << " rel " << report.max_rel_error);
    REQUIRE(report.passed);
    REQUIRE(report.coords_checked > 0);
}
