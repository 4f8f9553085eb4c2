#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "resgen/pipeline.hpp"

using namespace resgen;
namespace fs = std::filesystem;

namespace {

PipelineConfig micro_config(std::uint64_t seed) {
    PipelineConfig cfg;
    cfg.synth_count = 8;
    cfg.synth.n = 8;
    cfg.synth.k = 2;
    cfg.synth.p_rewire = 0.3;
    cfg.batch = 3;
    cfg.top_c = 2;
    cfg.max_iterations = 2;
    cfg.epsilon = 1e-12;
    cfg.ascent_steps = 3;
    cfg.generator.latent_dim = 6;
    cfg.generator.hidden = 8;
    cfg.generator.enc_rounds = 2;
    cfg.estimator.gcn_widths = {6, 8};
    cfg.estimator.readout_widths = {8, 1};
    cfg.pretrain_est_epochs = 2;
    cfg.pretrain_gen_epochs = 1;
    cfg.est_finetune_epochs = 1;
    cfg.gen_finetune_epochs = 1;
    cfg.gen_finetune_subsample = 4;
    cfg.seed = seed;
    return cfg;
}

PipelineState micro_state(std::uint64_t seed) {
    PipelineConfig cfg = micro_config(seed);
    PipelineState st;
    st.config = cfg;
    SynthConfig synth = cfg.synth;
    synth.seed = derive_seed(seed, 0xda7au);
    st.dataset = build_dataset(cfg.synth_count, synth);

    EstimatorConfig ecfg = cfg.estimator;
    st.estimator = EstimatorModel::init(ecfg, derive_seed(seed, 0x1e57u));
    EstimatorTrainOptions eopt;
    eopt.epochs = 2;
    eopt.seed = derive_seed(seed, 0x1e58u);
    train_estimator(st.estimator, st.dataset, eopt);

    st.generator = GeneratorModel::init(cfg.generator, derive_seed(seed, 0x6e30u));
    GeneratorTrainOptions gopt;
    gopt.epochs = 1;
    gopt.seed = derive_seed(seed, 0x6e31u);
    train_generator(st.generator, st.dataset.graphs, st.dataset.labels, gopt);

    std::size_t best = 0;
    for (std::size_t i = 1; i < st.dataset.size(); ++i)
        if (st.dataset.labels[i] > st.dataset.labels[best]) best = i;
    st.best_design = st.dataset.graphs[best];
    st.best_label = st.dataset.labels[best];
    return st;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::path("/tmp") / ("resgen_pipe_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    REQUIRE(is.good());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("pipeline config validation") {
    PipelineConfig cfg;
    REQUIRE_NOTHROW(cfg.validate());

    PipelineConfig bad = cfg;
    bad.top_c = 0;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.top_c = bad.batch + 1;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.max_iterations = 0;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.epsilon = 0.0;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.prior_fraction = 1.5;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.resample_budget = 0;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("pipeline config JSON round-trips") {
    PipelineConfig cfg = micro_config(99);
    cfg.use_combined_label = true;
    cfg.alpha = 0.25;
    cfg.cost_k = 40.0;
    cfg.q_target = 7.5;
    cfg.prior_fraction = 0.5;
    cfg.compute_edns = true;
    cfg.edns.grid.cells_per_side = 4;
    cfg.edns.n_samples = 33;
    cfg.store_iteration_designs = true;
    cfg.dataset_path = "somewhere.jsonl";
    cfg.estimator_checkpoint = "est.ckpt";

    PipelineConfig back = pipeline_config_from_json(pipeline_config_to_json(cfg));
    REQUIRE(back.dataset_path == cfg.dataset_path);
    REQUIRE(back.synth_count == cfg.synth_count);
    REQUIRE(back.synth.n == cfg.synth.n);
    REQUIRE(back.use_combined_label);
    REQUIRE(back.alpha == cfg.alpha);
    REQUIRE(back.cost_k == cfg.cost_k);
    REQUIRE(back.q_target == cfg.q_target);
    REQUIRE(back.batch == cfg.batch);
    REQUIRE(back.top_c == cfg.top_c);
    REQUIRE(back.prior_fraction == cfg.prior_fraction);
    REQUIRE(back.generator.latent_dim == cfg.generator.latent_dim);
    REQUIRE(back.estimator.gcn_widths == cfg.estimator.gcn_widths);
    REQUIRE(back.estimator_checkpoint == cfg.estimator_checkpoint);
    REQUIRE(back.edns.grid.cells_per_side == 4);
    REQUIRE(back.edns.n_samples == 33);
    REQUIRE(back.store_iteration_designs);
    REQUIRE(back.seed == cfg.seed);

    SECTION("an omitted target stays automatic") {
        PipelineConfig plain;
        nlohmann::json j = pipeline_config_to_json(plain);
        REQUIRE_FALSE(j.contains("q_target"));
        REQUIRE(std::isnan(pipeline_config_from_json(j).q_target));
    }

    SECTION("unknown keys are rejected") {
        nlohmann::json j = pipeline_config_to_json(cfg);
        j["bacth"] = 12;
        REQUIRE_THROWS_AS(pipeline_config_from_json(j), ParseError);

        nlohmann::json nested = pipeline_config_to_json(cfg);
        nested["synth"]["nodes"] = 10;
        REQUIRE_THROWS_AS(pipeline_config_from_json(nested), ParseError);
        REQUIRE_THROWS_AS(pipeline_config_from_json(nlohmann::json::array()), ParseError);
    }

    SECTION("invalid settings fail after parsing") {
        nlohmann::json j = pipeline_config_to_json(cfg);
        j["top_c"] = 0;
        REQUIRE_THROWS_AS(pipeline_config_from_json(j), ConfigError);
    }
}

TEST_CASE("iteration records round-trip through CSV") {
    std::vector<IterationRecord> records(3);
    records[0].iteration = 1;
    records[0].best_estimated_q = 1.25;
    records[0].mean_topc_estimated = 1.0 / 3.0;
    records[0].mean_topc_true = 0.875;
    records[0].blended_ids = {7, 2, 9};
    records[0].est_train_mse = 0.001953125;
    records[0].gen_kl = 12.5;
    records[0].gen_dec = 99.0;
    records[0].gen_perf = 0.25;
    records[0].edns = std::numeric_limits<double>::quiet_NaN();
    records[1].iteration = 2;
    records[1].best_estimated_q = -3.0e-17;
    records[1].blended_ids = {0};
    records[1].edns = 2.125;
    records[2].iteration = 3;
    records[2].mean_topc_true = 1e300;

    const std::string path = "/tmp/resgen_test_records.csv";
    write_records_csv(path, records);
    std::vector<IterationRecord> back = read_records_csv(path);
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) REQUIRE(back[i] == records[i]);

    SECTION("the header is enforced") {
        std::ofstream os(path);
        os << "iteration,best\n1,2\n";
        os.close();
        REQUIRE_THROWS_AS(read_records_csv(path), ParseError);
    }

    SECTION("short rows are rejected") {
        std::ofstream os(path);
        os << kRecordsHeader << "\n1,2,3\n";
        os.close();
        REQUIRE_THROWS_AS(read_records_csv(path), ParseError);
    }
    fs::remove(path);
}

TEST_CASE("an iteration keeps the dataset size and blends true labels") {
    PipelineState st = micro_state(5);
    const std::size_t n0 = st.dataset.size();
    const double initial_best = st.best_label;

    IterationRecord rec = run_iteration(st);
    REQUIRE(rec.iteration == 1);
    REQUIRE(st.dataset.size() == n0);
    REQUIRE(rec.blended_ids.size() == st.config.top_c);
    REQUIRE(st.last_topc.size() == st.config.top_c);

    // Every blended row carries the true metric of the design now in it.
    for (std::size_t i = 0; i < rec.blended_ids.size(); ++i) {
        std::size_t row = rec.blended_ids[i];
        REQUIRE(st.dataset.labels[row] ==
                true_metric(st.dataset.graphs[row], st.config));
        REQUIRE(st.dataset.graphs[row] == st.last_topc[i]);
    }

    // The incumbent never regresses.
    REQUIRE(st.best_label >= initial_best);
    REQUIRE(st.best_label == true_metric(st.best_design, st.config));

    IterationRecord rec2 = run_iteration(st);
    REQUIRE(rec2.iteration == 2);
    REQUIRE(rec2.best_estimated_q >= rec.best_estimated_q);  // running maximum
    REQUIRE(std::isnan(rec.edns));  // EDNS reporting is off by default
}

TEST_CASE("iterations are bit-deterministic in the seed") {
    PipelineState a = micro_state(12);
    PipelineState b = micro_state(12);
    IterationRecord ra = run_iteration(a);
    IterationRecord rb = run_iteration(b);
    REQUIRE(ra == rb);
    REQUIRE(a.best_design == b.best_design);
    REQUIRE(a.dataset.labels == b.dataset.labels);

    PipelineState c = micro_state(13);
    IterationRecord rc = run_iteration(c);
    REQUIRE_FALSE(ra == rc);
}

TEST_CASE("candidate exhaustion raises a pipeline error") {
    PipelineState st = micro_state(3);
    st.config.prior_fraction = 1.0;  // force the prior path
    st.config.resample_budget = 2;
    st.generator.node_count_hist.clear();  // untrained: no node-count distribution

    REQUIRE_THROWS_MATCHES(
        run_iteration(st), PipelineError,
        Catch::Matchers::MessageMatches(
            Catch::Matchers::ContainsSubstring("exhausted its resample budget")));
}

TEST_CASE("a full run writes the complete artifact set") {
    TempDir dir("full");
    PipelineConfig cfg = micro_config(7);
    cfg.compute_edns = true;
    cfg.edns.grid.cells_per_side = 2;
    cfg.edns.n_samples = 20;
    cfg.store_iteration_designs = true;

    RunResult result = run_pipeline(cfg, dir.str());
    REQUIRE(result.records.size() == 2);
    REQUIRE(result.dir == dir.str());

    for (const char* name :
         {"config.json", "records.csv", "report.json", "estimator.ckpt",
          "generator.ckpt", "designs/best.json", "designs/final_top_1.json",
          "designs/final_top_2.json", "designs/iter_0001_top_1.json",
          "designs/iter_0002_top_2.json"})
        REQUIRE(fs::exists(dir.path / name));

    SECTION("records round-trip and EDNS is populated") {
        std::vector<IterationRecord> back =
            read_records_csv((dir.path / "records.csv").string());
        REQUIRE(back.size() == result.records.size());
        for (std::size_t i = 0; i < back.size(); ++i)
            REQUIRE(back[i] == result.records[i]);
        for (const auto& rec : result.records) REQUIRE_FALSE(std::isnan(rec.edns));
    }

    SECTION("the report is coherent") {
        nlohmann::json report = nlohmann::json::parse(slurp(dir.path / "report.json"));
        REQUIRE(report.at("schema_version") == 1);
        REQUIRE(report.at("iterations") == result.records.size());
        REQUIRE(report.at("converged") == result.converged);
        REQUIRE(report.at("best_label") == result.best_label);
        REQUIRE(report.at("objective") == "maximize");
        REQUIRE(report.at("designs").size() == 1 + cfg.top_c);
        REQUIRE(report.at("designs")[0].at("source") == "incumbent");
        REQUIRE(report.at("designs")[1].at("source") == "final-top");
    }

    SECTION("the stored best design reproduces its label") {
        DesignGraph best = read_graph_file((dir.path / "designs" / "best.json").string());
        REQUIRE(validate(best).empty());
        REQUIRE(true_metric(best, cfg) == result.best_label);
    }

    SECTION("the incumbent never loses to the seed dataset") {
        SynthConfig synth = cfg.synth;
        synth.seed = derive_seed(cfg.seed, 0xda7au);
        Dataset ds = build_dataset(cfg.synth_count, synth);
        double seed_best = *std::max_element(ds.labels.begin(), ds.labels.end());
        REQUIRE(result.best_label >= seed_best);
    }

    SECTION("the saved config reloads to an equivalent run") {
        PipelineConfig back = pipeline_config_from_json(
            nlohmann::json::parse(slurp(dir.path / "config.json")));
        REQUIRE(back.seed == cfg.seed);
        REQUIRE(back.batch == cfg.batch);
        REQUIRE(back.compute_edns);
    }

    SECTION("post-processing ranks stored designs by EDNS") {
        EdnsConfig ecfg;
        ecfg.grid.cells_per_side = 2;
        ecfg.n_samples = 20;
        ecfg.seed = 42;
        std::vector<PostProcessRow> rows = post_process(dir.str(), ecfg);
        REQUIRE(rows.size() == 1 + cfg.top_c);
        for (std::size_t i = 1; i < rows.size(); ++i)
            REQUIRE(rows[i - 1].edns_value <= rows[i].edns_value);
        REQUIRE(fs::exists(dir.path / "post_process.csv"));
        std::string csv = slurp(dir.path / "post_process.csv");
        REQUIRE(csv.rfind("file,label,edns,edns_std_error\n", 0) == 0);
    }
}

TEST_CASE("a wide tolerance converges after the second iteration") {
    TempDir dir("conv");
    PipelineConfig cfg = micro_config(21);
    cfg.max_iterations = 10;
    cfg.epsilon = 1e9;  // any two consecutive bests are within this
    RunResult result = run_pipeline(cfg, dir.str());
    REQUIRE(result.converged);
    REQUIRE(result.records.size() == 2);  // convergence needs one comparison

    nlohmann::json report = nlohmann::json::parse(slurp(dir.path / "report.json"));
    REQUIRE(report.at("converged") == true);
}

TEST_CASE("matched seeds give byte-identical run artifacts") {
    TempDir a("det_a");
    TempDir b("det_b");
    PipelineConfig cfg = micro_config(31);
    run_pipeline(cfg, a.str());
    run_pipeline(cfg, b.str());
    REQUIRE(slurp(a.path / "records.csv") == slurp(b.path / "records.csv"));
    REQUIRE(slurp(a.path / "report.json") == slurp(b.path / "report.json"));
    REQUIRE(slurp(a.path / "designs" / "best.json") ==
            slurp(b.path / "designs" / "best.json"));

    TempDir c("det_c");
    PipelineConfig other = micro_config(32);
    run_pipeline(other, c.str());
    REQUIRE(slurp(a.path / "records.csv") != slurp(c.path / "records.csv"));
}

TEST_CASE("pretrained checkpoints are honored") {
    TempDir first("ckpt_src");
    PipelineConfig cfg = micro_config(41);
    run_pipeline(cfg, first.str());

    TempDir second("ckpt_use");
    PipelineConfig reuse = cfg;
    reuse.estimator_checkpoint = (first.path / "estimator.ckpt").string();
    reuse.generator_checkpoint = (first.path / "generator.ckpt").string();
    reuse.pretrain_est_epochs = 0;
    reuse.pretrain_gen_epochs = 0;
    RunResult result = run_pipeline(reuse, second.str());
    REQUIRE_FALSE(result.records.empty());
    REQUIRE(fs::exists(second.path / "report.json"));
}

TEST_CASE("labeled dataset files feed the pipeline") {
    SynthConfig synth;
    synth.n = 8;
    synth.k = 2;
    synth.seed = 0xdada;
    Dataset ds = build_dataset(8, synth);

    const std::string data_path = "/tmp/resgen_pipe_dataset.jsonl";
    write_dataset_file(data_path, to_labeled(ds));

    TempDir dir("from_file");
    PipelineConfig cfg = micro_config(51);
    cfg.dataset_path = data_path;
    cfg.max_iterations = 1;
    RunResult result = run_pipeline(cfg, dir.str());
    REQUIRE(result.records.size() == 1);

    SECTION("a dataset below two rows is refused") {
        std::vector<LabeledGraph> one{to_labeled(ds)[0]};
        const std::string tiny_path = "/tmp/resgen_pipe_tiny.jsonl";
        write_dataset_file(tiny_path, one);
        PipelineConfig small = cfg;
        small.dataset_path = tiny_path;
        TempDir dir2("tiny");
        REQUIRE_THROWS_AS(run_pipeline(small, dir2.str()), ConfigError);
        fs::remove(tiny_path);
    }
    fs::remove(data_path);
}

TEST_CASE("q targets resolve from the incumbent when automatic") {
    PipelineState st = micro_state(61);
    double best = *std::max_element(st.dataset.labels.begin(), st.dataset.labels.end());
    REQUIRE(resolve_q_target(st) == best * st.config.q_target_factor);

    st.config.q_target = 123.0;
    REQUIRE(resolve_q_target(st) == 123.0);

    st.config.q_target = std::numeric_limits<double>::quiet_NaN();
    st.config.maximize = false;
    double worst = *std::min_element(st.dataset.labels.begin(), st.dataset.labels.end());
    REQUIRE(resolve_q_target(st) == worst / st.config.q_target_factor);
}
