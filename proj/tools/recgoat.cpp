// recgoat: synthetic data generation, dataset preparation, training,
// evaluation, ablation, fusion-weight sweeps, and numeric bound verification
// behind one binary.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "recgoat/config.hpp"
#include "recgoat/logging.hpp"
#include "recgoat/pipeline.hpp"
#include "recgoat/theory.hpp"

namespace fs = std::filesystem;
using namespace recgoat;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    long long seed = -1;
    std::string variant;
    int k = -1;
    int epochs = -1;
    int device_threads = -1;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON config file (flat key set, see footer)");
    cmd->add_option("--out", flags.out_dir, "output directory");
    cmd->add_option("--seed", flags.seed, "master seed override");
    cmd->add_option("--variant", flags.variant, "model variant override");
    cmd->add_option("--k", flags.k, "k-core threshold (prepare) or eval cutoff (evaluate)");
    cmd->add_option("--epochs", flags.epochs, "epoch count override");
    cmd->add_option("--device-threads", flags.device_threads, "row-parallel thread count");
}

RunConfig resolve_config(const CommonFlags& flags) {
    RunConfig cfg = flags.config_path.empty() ? RunConfig{} : RunConfig::from_json_file(flags.config_path);
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (flags.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(flags.seed);
    if (!flags.variant.empty()) cfg.train.variant = parse_variant(flags.variant);
    if (flags.k >= 0) {
        cfg.k_core = flags.k;
        cfg.train.eval_k = flags.k;
    }
    if (flags.epochs >= 0) cfg.train.epochs = flags.epochs;
    if (flags.device_threads >= 1) cfg.train.n_threads = flags.device_threads;
    return cfg;
}

void require_out(const RunConfig& cfg) {
    if (cfg.out_dir.empty()) throw std::invalid_argument("config: out_dir (or --out) is required");
}

LoadedDataset load_from_config(const RunConfig& cfg) {
    if (cfg.data_dir.empty()) throw std::invalid_argument("config: data_dir is required");
    auto feature_path = [&](const std::string& configured, const char* fallback) {
        if (!configured.empty()) return configured;
        fs::path p = fs::path(cfg.data_dir) / fallback;
        if (fs::exists(p)) return p.string();
        throw std::invalid_argument(std::string("config: feature file for ") + fallback + " not found");
    };
    return load_dataset(cfg.data_dir, feature_path(cfg.item_text, "item_text.rgf1"),
                        feature_path(cfg.item_visual, "item_visual.rgf1"),
                        feature_path(cfg.user_text, "user_text.rgf1"));
}

int cmd_generate(const CommonFlags& flags) {
    RunConfig cfg = resolve_config(flags);
    require_out(cfg);
    SyntheticData data = generate_synthetic(cfg.synth, cfg.train.seed);
    write_dataset_dir(data, cfg.out_dir);
    std::ofstream stats(fs::path(cfg.out_dir) / "stats.json", std::ios::trunc);
    stats << dataset_stats_json(data.interactions, cfg.train.seed) << '\n';
    std::cout << dataset_stats_json(data.interactions, cfg.train.seed) << std::endl;
    return 0;
}

int cmd_prepare(const CommonFlags& flags) {
    RunConfig cfg = resolve_config(flags);
    require_out(cfg);
    if (cfg.interactions.empty()) throw std::invalid_argument("config: interactions path is required");

    LoadedInteractions loaded = load_interactions(cfg.interactions, /*persist_maps=*/false);
    KCoreResult cored = apply_k_core_mapped(loaded.table, cfg.k_core);
    DatasetSplit split =
        split_dataset(cored.table, cfg.ratio_train, cfg.ratio_val, cfg.ratio_test, cfg.train.seed);
    write_split_dir(split, cfg.out_dir);

    // compose raw-id maps through the k-core compaction
    std::vector<std::int64_t> user_raw(cored.kept_users.size()), item_raw(cored.kept_items.size());
    for (std::size_t i = 0; i < cored.kept_users.size(); ++i) user_raw[i] = loaded.user_raw_ids[cored.kept_users[i]];
    for (std::size_t i = 0; i < cored.kept_items.size(); ++i) item_raw[i] = loaded.item_raw_ids[cored.kept_items[i]];
    save_id_map(user_raw, (fs::path(cfg.out_dir) / "user_map.tsv").string());
    save_id_map(item_raw, (fs::path(cfg.out_dir) / "item_map.tsv").string());

    std::ifstream stats(fs::path(cfg.out_dir) / "stats.json");
    std::cout << stats.rdbuf();
    return 0;
}

int cmd_train(const CommonFlags& flags) {
    RunConfig cfg = resolve_config(flags);
    require_out(cfg);
    LoadedDataset data = load_from_config(cfg);
    Checkpoint ckpt = run_training(cfg, data, cfg.out_dir);
    std::cout << "{\"checkpoint\": \"" << (fs::path(cfg.out_dir) / "checkpoint").string()
              << "\", \"best_epoch\": " << ckpt.best_epoch << ", \"val_recall\": " << ckpt.val_recall
              << ", \"val_ndcg\": " << ckpt.val_ndcg << "}" << std::endl;
    return 0;
}

int cmd_evaluate(const CommonFlags& flags) {
    RunConfig cfg = resolve_config(flags);
    if (cfg.checkpoint_dir.empty()) throw std::invalid_argument("config: checkpoint_dir is required");
    LoadedDataset data = load_from_config(cfg);
    Checkpoint ckpt = load_checkpoint(cfg.checkpoint_dir);
    EvalResult result = evaluate_checkpoint(ckpt, data, cfg.train.eval_k, parse_item_rep(cfg.item_rep),
                                            cfg.train.n_threads);
    std::cout << eval_result_json(result, cfg.train.eval_k) << std::endl;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        save_per_user_tsv(result, (fs::path(cfg.out_dir) / "per_user.tsv").string());
    }
    return 0;
}

int cmd_ablate(const CommonFlags& flags) {
    RunConfig cfg = resolve_config(flags);
    require_out(cfg);
    LoadedDataset data = load_from_config(cfg);
    TrainContext ctx = build_train_context(data.split.train, data.item_text, data.item_visual, data.user_text,
                                           cfg.train.k_knn, cfg.train.n_threads);

    const std::vector<Variant> variants = {Variant::Full,  Variant::IdOnly,   Variant::Concat,
                                           Variant::Sum,   Variant::CmclOnly, Variant::OatOnly};
    nlohmann::json table = nlohmann::json::array();
    fs::create_directories(cfg.out_dir);
    std::ofstream tsv(fs::path(cfg.out_dir) / "ablation.tsv", std::ios::trunc);
    tsv << "variant\trecall_mean\trecall_std\tndcg_mean\tndcg_std\tseeds\n";

    for (Variant variant : variants) {
        std::vector<double> recalls, ndcgs;
        for (int s = 0; s < cfg.ablate_seeds; ++s) {
            TrainConfig tc = cfg.train;
            tc.variant = variant;
            tc.seed = cfg.train.seed + static_cast<std::uint64_t>(s);
            TrainResult run = train(tc, data.split, ctx);
            Representations reps = forward_representations(run.params, ctx, tc, run.plan_t, run.plan_v);
            EvalResult ev = evaluate_rankings(reps.users, reps.items, data.split.test,
                                              {&data.split.train, &data.split.validation}, tc.eval_k,
                                              tc.n_threads);
            recalls.push_back(ev.recall);
            ndcgs.push_back(ev.ndcg);
        }
        auto mean_std = [](const std::vector<double>& xs) {
            const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
            double var = 0.0;
            for (double x : xs) var += (x - mean) * (x - mean);
            return std::pair<double, double>(mean, xs.size() > 1 ? std::sqrt(var / (xs.size() - 1)) : 0.0);
        };
        auto [rm, rs] = mean_std(recalls);
        auto [nm, ns] = mean_std(ndcgs);
        table.push_back({{"variant", variant_name(variant)},
                         {"recall_mean", rm},
                         {"recall_std", rs},
                         {"ndcg_mean", nm},
                         {"ndcg_std", ns},
                         {"seeds", cfg.ablate_seeds}});
        char line[256];
        std::snprintf(line, sizeof(line), "%s\t%.6f\t%.6f\t%.6f\t%.6f\t%d\n", variant_name(variant).c_str(), rm,
                      rs, nm, ns, cfg.ablate_seeds);
        tsv << line;
        std::cerr << line;
    }
    std::ofstream js(fs::path(cfg.out_dir) / "ablation.json", std::ios::trunc);
    js << table.dump(2) << '\n';
    std::cout << table.dump(2) << std::endl;
    return 0;
}

int cmd_verify_bounds(const CommonFlags& flags) {
    RunConfig cfg = resolve_config(flags);
    BoundSuiteResult suite = run_bound_suite(cfg.lemma1_trials, cfg.theorem_trials, cfg.train.seed);
    std::cout << "[";
    for (std::size_t i = 0; i < suite.reports.size(); ++i)
        std::cout << (i ? ",\n " : "\n ") << suite.reports[i].to_json();
    std::cout << "\n]" << std::endl;
    std::cerr << "lemma1 failures: " << suite.lemma1_failures
              << ", consistency failures: " << suite.consistency_failures
              << ", comprehensiveness failures: " << suite.comprehensiveness_failures
              << ", lemma2 printed-form flags: " << suite.lemma2_flagged << std::endl;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        std::ofstream out(fs::path(cfg.out_dir) / "bounds.json", std::ios::trunc);
        out << "[";
        for (std::size_t i = 0; i < suite.reports.size(); ++i)
            out << (i ? ",\n " : "\n ") << suite.reports[i].to_json();
        out << "\n]\n";
    }
    return suite.all_asserted_hold() ? 0 : 3;
}

int cmd_sweep(const CommonFlags& flags) {
    RunConfig cfg = resolve_config(flags);
    require_out(cfg);
    LoadedDataset data = load_from_config(cfg);
    TrainContext ctx = build_train_context(data.split.train, data.item_text, data.item_visual, data.user_text,
                                           cfg.train.k_knn, cfg.train.n_threads);
    fs::create_directories(cfg.out_dir);
    std::ofstream tsv(fs::path(cfg.out_dir) / "sweep.tsv", std::ios::trunc);
    tsv << "gamma_t\tgamma_v\trecall\tndcg\n";

    const int steps = static_cast<int>(std::llround(1.0 / cfg.sweep_step));
    int points = 0;
    for (int i = 0; i <= steps; ++i) {
        for (int j = 0; i + j <= steps; ++j) {
            TrainConfig tc = cfg.train;
            tc.alignment.gamma_t = static_cast<double>(i) * cfg.sweep_step;
            tc.alignment.gamma_v = static_cast<double>(j) * cfg.sweep_step;
            if (cfg.sweep_epochs > 0) tc.epochs = cfg.sweep_epochs;
            TrainResult run = train(tc, data.split, ctx);
            Representations reps = forward_representations(run.params, ctx, tc, run.plan_t, run.plan_v);
            EvalResult ev = evaluate_rankings(reps.users, reps.items, data.split.test,
                                              {&data.split.train, &data.split.validation}, tc.eval_k,
                                              tc.n_threads);
            char line[160];
            std::snprintf(line, sizeof(line), "%.2f\t%.2f\t%.6f\t%.6f\n", tc.alignment.gamma_t,
                          tc.alignment.gamma_v, ev.recall, ev.ndcg);
            tsv << line;
            std::cerr << line;
            ++points;
        }
    }
    std::cout << "{\"grid_points\": " << points << ", \"table\": \""
              << (fs::path(cfg.out_dir) / "sweep.tsv").string() << "\"}" << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"recgoat: dual-granularity modality/ID alignment recommender"};
    app.require_subcommand(1);
    app.footer(config_help_text());

    CommonFlags flags;
    int (*handler)(const CommonFlags&) = nullptr;

    auto register_cmd = [&](const char* name, const char* desc, int (*fn)(const CommonFlags&)) {
        CLI::App* cmd = app.add_subcommand(name, desc);
        add_common(cmd, flags);
        cmd->callback([&handler, fn] { handler = fn; });
        return cmd;
    };

    register_cmd("generate", "generate a synthetic dataset directory", cmd_generate);
    register_cmd("prepare", "k-core filter and 8:1:1 split of an interactions TSV", cmd_prepare);
    register_cmd("train", "train a model on a prepared dataset", cmd_train);
    register_cmd("evaluate", "rank the test set from a checkpoint", cmd_evaluate);
    register_cmd("ablate", "run all six variants over a shared seed set", cmd_ablate);
    register_cmd("verify-bounds", "numeric checks of the alignment bounds", cmd_verify_bounds);
    register_cmd("sweep", "grid over the (gamma_t, gamma_v) fusion simplex", cmd_sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        return handler ? handler(flags) : 1;
    } catch (const std::invalid_argument& e) {
        log::error(e.what());
        return 1;
    } catch (const std::exception& e) {
        log::error(e.what());
        return 2;
    }
}
