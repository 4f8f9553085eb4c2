// Command-line front end. Every subcommand reports failures as a JSON object
// on stderr and a nonzero exit code so callers can script against it.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "resgen/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace resgen;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
};

json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return j;
}

void write_history_csv(const std::string& path, const EstimatorHistory& h) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << "epoch,train_mse,val_mse\n";
    for (std::size_t i = 0; i < h.train_mse.size(); ++i)
        os << (i + 1) << ',' << detail::fmt_double(h.train_mse[i]) << ','
           << detail::fmt_double(h.val_mse[i]) << "\n";
}

void write_history_csv(const std::string& path, const GeneratorHistory& h) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << "epoch,kl,decode,perf,total\n";
    for (std::size_t i = 0; i < h.kl.size(); ++i)
        os << (i + 1) << ',' << detail::fmt_double(h.kl[i]) << ','
           << detail::fmt_double(h.dec[i]) << ',' << detail::fmt_double(h.perf[i]) << ','
           << detail::fmt_double(h.total[i]) << "\n";
}

Dataset load_labeled_dataset(const std::string& path) {
    return dataset_from_labeled(read_dataset_file(path), SynthConfig{});
}

int run(int argc, char** argv) {
    CLI::App app{"Generative design toolkit for flow networks"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "JSON config file (optimize)");
    app.add_option("--seed", g.seed, "Master seed override");
    app.add_option("--out-dir", g.out_dir, "Default output directory");

    // ---- gen-dataset ----
    auto* gen_ds = app.add_subcommand("gen-dataset", "Synthesize a labeled dataset");
    std::size_t ds_count = 500;
    SynthConfig synth;
    std::string ds_out = "dataset.jsonl";
    gen_ds->add_option("--count", ds_count, "Number of graphs");
    gen_ds->add_option("--nodes", synth.n, "Nodes per graph");
    gen_ds->add_option("--degree", synth.k, "Ring lattice degree (even)");
    gen_ds->add_option("--p-rewire", synth.p_rewire, "Rewiring probability");
    gen_ds->add_option("--beta", synth.beta, "Supply placement concentration");
    gen_ds->add_option("--out", ds_out, "Output JSONL path");

    // ---- train-estimator ----
    auto* tr_est = app.add_subcommand("train-estimator", "Fit the performance estimator");
    std::string te_dataset, te_out = "estimator.ckpt", te_history;
    EstimatorTrainOptions te_opt;
    double te_lr = 3e-3;
    tr_est->add_option("--dataset", te_dataset, "Labeled JSONL dataset")->required();
    tr_est->add_option("--epochs", te_opt.epochs, "Training epochs");
    tr_est->add_option("--lr", te_lr, "Learning rate");
    tr_est->add_option("--batch-size", te_opt.batch_size, "Minibatch size");
    tr_est->add_option("--split", te_opt.split, "Training fraction");
    tr_est->add_option("--out", te_out, "Checkpoint path");
    tr_est->add_option("--history", te_history, "Per-epoch CSV path");

    // ---- train-generator ----
    auto* tr_gen = app.add_subcommand("train-generator", "Fit the graph generator");
    std::string tg_dataset, tg_out = "generator.ckpt", tg_history;
    GeneratorConfig gen_cfg;
    GeneratorTrainOptions tg_opt;
    double tg_lr = 1e-3;
    tr_gen->add_option("--dataset", tg_dataset, "Labeled JSONL dataset")->required();
    tr_gen->add_option("--epochs", tg_opt.epochs, "Training epochs");
    tr_gen->add_option("--lr", tg_lr, "Learning rate");
    tr_gen->add_option("--batch-size", tg_opt.batch_size, "Minibatch size");
    tr_gen->add_option("--subsample", tg_opt.subsample, "Graphs per epoch (0 = all)");
    tr_gen->add_option("--latent-dim", gen_cfg.latent_dim, "Latent width per node");
    tr_gen->add_option("--hidden", gen_cfg.hidden, "Scorer hidden width");
    tr_gen->add_option("--enc-rounds", gen_cfg.enc_rounds, "Encoder message rounds");
    tr_gen->add_option("--out", tg_out, "Checkpoint path");
    tr_gen->add_option("--history", tg_history, "Per-epoch CSV path");

    // ---- generate ----
    auto* gen_cmd = app.add_subcommand("generate", "Decode designs from the generator");
    std::string gn_model, gn_estimator, gn_constraints, gn_mode = "sample";
    std::size_t gn_count = 1, gn_steps = 15;
    double gn_target = std::numeric_limits<double>::quiet_NaN(), gn_step_size = 0.05;
    gen_cmd->add_option("--generator", gn_model, "Generator checkpoint")->required();
    gen_cmd->add_option("--estimator", gn_estimator, "Optional estimator for scoring");
    gen_cmd->add_option("--count", gn_count, "Designs to emit");
    gen_cmd->add_option("--mode", gn_mode, "greedy or sample")
        ->check(CLI::IsMember({"greedy", "sample"}));
    gen_cmd->add_option("--q-target", gn_target, "Latent ascent target score");
    gen_cmd->add_option("--ascent-steps", gn_steps, "Latent ascent steps");
    gen_cmd->add_option("--step-size", gn_step_size, "Latent ascent step size");
    gen_cmd->add_option("--constraints", gn_constraints,
                        "Expansion constraints JSON (graph + new_nodes)");

    // ---- optimize ----
    auto* opt_cmd = app.add_subcommand("optimize", "Run the closed design loop");

    // ---- simulate ----
    auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo disruption sweep");
    std::string sm_graph, sm_out = "simulate.csv";
    EdnsConfig sm_cfg;
    sim_cmd->add_option("--graph", sm_graph, "Design JSON")->required();
    sim_cmd->add_option("--grid", sm_cfg.grid.cells_per_side, "Mesh cells per side");
    sim_cmd->add_option("--p0", sm_cfg.p0, "Epicenter failure probability");
    sim_cmd->add_option("--gamma", sm_cfg.gamma, "Distance decay factor");
    sim_cmd->add_option("--samples", sm_cfg.n_samples, "Monte Carlo samples");
    sim_cmd->add_option("--out", sm_out, "Output CSV path");

    // ---- report ----
    auto* rep_cmd = app.add_subcommand("report", "Post-process a finished run");
    std::string rp_dir;
    EdnsConfig rp_cfg;
    rep_cmd->add_option("--run-dir", rp_dir, "Run directory")->required();
    rep_cmd->add_option("--grid", rp_cfg.grid.cells_per_side, "Mesh cells per side");
    rep_cmd->add_option("--p0", rp_cfg.p0, "Epicenter failure probability");
    rep_cmd->add_option("--gamma", rp_cfg.gamma, "Distance decay factor");
    rep_cmd->add_option("--samples", rp_cfg.n_samples, "Monte Carlo samples");

    // ---- evaluate ----
    auto* ev_cmd = app.add_subcommand("evaluate", "Flow metrics for one design");
    std::string ev_graph;
    double ev_alpha = 0.5, ev_k = 1.0, ev_a = 1.0;
    ev_cmd->add_option("--graph", ev_graph, "Design JSON")->required();
    ev_cmd->add_option("--alpha", ev_alpha, "Capacity ratio weight");
    ev_cmd->add_option("--cost-k", ev_k, "Cost normalizer");
    ev_cmd->add_option("--unit-a", ev_a, "Cost per unit capacity");

    for (CLI::App* sub : {gen_ds, tr_est, tr_gen, gen_cmd, opt_cmd, sim_cmd, rep_cmd, ev_cmd})
        sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    std::uint64_t seed = g.seed.value_or(0);
    fs::create_directories(g.out_dir);
    auto in_out_dir = [&](const std::string& p) {
        return fs::path(p).is_absolute() ? p : (fs::path(g.out_dir) / p).string();
    };

    if (gen_ds->parsed()) {
        synth.seed = seed;
        Dataset ds = build_dataset(ds_count, synth);
        write_dataset_file(in_out_dir(ds_out), to_labeled(ds));
        std::cout << json{{"graphs", ds.size()}, {"path", in_out_dir(ds_out)}}.dump()
                  << "\n";
        return 0;
    }
    if (tr_est->parsed()) {
        Dataset ds = load_labeled_dataset(te_dataset);
        te_opt.rule = OptimizerRule::adam(te_lr);
        te_opt.seed = seed;
        EstimatorModel model = EstimatorModel::init(EstimatorConfig{}, seed);
        EstimatorHistory h = train_estimator(model, ds, te_opt);
        model.save(in_out_dir(te_out));
        if (!te_history.empty()) write_history_csv(in_out_dir(te_history), h);
        std::cout << json{{"epochs", h.train_mse.size()},
                          {"best_epoch", h.best_epoch},
                          {"best_val_mse", h.best_val},
                          {"checkpoint", in_out_dir(te_out)}}
                         .dump()
                  << "\n";
        return 0;
    }
    if (tr_gen->parsed()) {
        Dataset ds = load_labeled_dataset(tg_dataset);
        tg_opt.rule = OptimizerRule::adam(tg_lr);
        tg_opt.seed = seed;
        GeneratorModel model = GeneratorModel::init(gen_cfg, seed);
        GeneratorHistory h = train_generator(model, ds.graphs, ds.labels, tg_opt);
        model.save(in_out_dir(tg_out));
        if (!tg_history.empty()) write_history_csv(in_out_dir(tg_history), h);
        std::cout << json{{"epochs", h.total.size()},
                          {"final_loss", h.total.back()},
                          {"checkpoint", in_out_dir(tg_out)}}
                         .dump()
                  << "\n";
        return 0;
    }
    if (gen_cmd->parsed()) {
        GeneratorModel model = GeneratorModel::load(gn_model);
        std::optional<EstimatorModel> scorer;
        if (!gn_estimator.empty()) scorer = EstimatorModel::load(gn_estimator);

        std::optional<ExpansionConstraints> cons;
        if (!gn_constraints.empty()) {
            json cj = load_json_file(gn_constraints);
            cons = ExpansionConstraints{resgen::detail::graph_from_json(cj.at("graph")),
                                        cj.at("new_nodes").get<std::size_t>()};
        }
        json out = json::array();
        for (std::size_t i = 0; i < gn_count; ++i) {
            std::uint64_t s = derive_seed(seed, 0x9e4eu, i);
            LatentCode code;
            if (cons) {
                code = expansion_code(model, cons->base, cons->new_nodes, s);
            } else {
                Rng rng(derive_seed(s, 0x517eu));
                std::size_t n_nodes = model.sample_node_count(rng);
                std::size_t d = model.config.latent_dim;
                std::vector<double> mu(n_nodes * d, 0.0), sg(n_nodes * d, 1.0),
                    z(n_nodes * d);
                for (auto& v : z) v = rng.normal();
                code.mu = Tensor::from({n_nodes, d}, std::move(mu));
                code.sigma = Tensor::from({n_nodes, d}, std::move(sg));
                code.z = Tensor::from({n_nodes, d}, std::move(z));
                code.eps_seed = s;
            }
            if (!std::isnan(gn_target))
                code = latent_ascent(model, code, gn_target, gn_steps, gn_step_size).code;
            DecodeOptions dopt;
            dopt.mode = gn_mode == "greedy" ? DecodeOptions::Mode::kGreedy
                                            : DecodeOptions::Mode::kSample;
            dopt.seed = derive_seed(s, 0xd0deu);
            dopt.step_guard_factor = code.node_count() + 2;
            if (cons) dopt.constraints = &*cons;
            DesignGraph design = decode(model, code, dopt);
            std::string name = "design_" + std::to_string(i) + ".json";
            write_graph_file(in_out_dir(name), design);
            json row{{"file", name},
                     {"nodes", design.nodes.size()},
                     {"edges", design.edges.size()}};
            if (scorer && !design.nodes.empty()) row["estimated_q"] = scorer->estimate(design);
            out.push_back(row);
        }
        std::cout << out.dump() << "\n";
        return 0;
    }
    if (opt_cmd->parsed()) {
        if (g.config_path.empty()) throw ConfigError("optimize needs --config");
        PipelineConfig cfg = pipeline_config_from_json(load_json_file(g.config_path));
        if (g.seed) cfg.seed = *g.seed;
        RunResult rr = run_pipeline(cfg, g.out_dir);
        std::cout << json{{"iterations", rr.records.size()},
                          {"converged", rr.converged},
                          {"best_label", rr.best_label},
                          {"run_dir", rr.dir}}
                         .dump()
                  << "\n";
        return 0;
    }
    if (sim_cmd->parsed()) {
        DesignGraph graph = read_graph_file(sm_graph);
        sm_cfg.seed = seed;
        EdnsEstimate est = edns(graph, sm_cfg);
        std::ofstream os(in_out_dir(sm_out));
        if (!os) throw IoError("cannot write " + sm_out);
        os << "sample,epicenter_row,epicenter_col,failed_nodes,failed_edges,C_e\n";
        for (const auto& r : est.records)
            os << r.sample << ',' << r.epicenter.row << ',' << r.epicenter.col << ','
               << r.outcome.failed_nodes.size() << ',' << r.outcome.failed_edges.size()
               << ',' << detail::fmt_double(r.outcome.lost_demand) << "\n";
        os << "# edns," << detail::fmt_double(est.edns) << ",std_error,"
           << detail::fmt_double(est.std_error) << "\n";
        std::cout << json{{"edns", est.edns},
                          {"std_error", est.std_error},
                          {"samples", est.records.size()},
                          {"path", in_out_dir(sm_out)}}
                         .dump()
                  << "\n";
        return 0;
    }
    if (rep_cmd->parsed()) {
        rp_cfg.seed = seed;
        auto rows = post_process(rp_dir, rp_cfg);
        json out = json::array();
        for (const auto& r : rows)
            out.push_back({{"file", r.file},
                           {"label", r.label},
                           {"edns", r.edns_value},
                           {"edns_std_error", r.edns_std_error}});
        std::cout << out.dump() << "\n";
        return 0;
    }
    if (ev_cmd->parsed()) {
        DesignGraph graph = read_graph_file(ev_graph);
        FlowResult fr = min_cost_max_flow(augment_source_sink(graph));
        double cr = capacity_ratio(graph, fr);
        double ce = edge_cost(graph, ev_a);
        std::cout << json{{"f_max", fr.f_max},
                          {"flow_cost", fr.total_cost},
                          {"capacity_ratio", cr},
                          {"edge_cost", ce},
                          {"q", combined_label(cr, ce, ev_alpha, ev_k)}}
                         .dump()
                  << "\n";
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        const char* kind = "Error";
        if (dynamic_cast<const ConfigError*>(&e)) kind = "ConfigError";
        else if (dynamic_cast<const ShapeError*>(&e)) kind = "ShapeError";
        else if (dynamic_cast<const ParseError*>(&e)) kind = "ParseError";
        else if (dynamic_cast<const DomainError*>(&e)) kind = "DomainError";
        else if (dynamic_cast<const DegenerateNetworkError*>(&e)) kind = "DegenerateNetworkError";
        else if (dynamic_cast<const MetricError*>(&e)) kind = "MetricError";
        else if (dynamic_cast<const TrainingError*>(&e)) kind = "TrainingError";
        else if (dynamic_cast<const DecodeError*>(&e)) kind = "DecodeError";
        else if (dynamic_cast<const PipelineError*>(&e)) kind = "PipelineError";
        else if (dynamic_cast<const IoError*>(&e)) kind = "IoError";
        std::cerr << nlohmann::json{{"error", {{"type", kind}, {"message", e.what()}}}}.dump()
                  << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error",
                                     {{"type", "InternalError"}, {"message", e.what()}}}}
                         .dump()
                  << "\n";
        return 1;
    }
}
