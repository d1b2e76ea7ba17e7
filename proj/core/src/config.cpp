#include "recgoat/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace recgoat {

const std::vector<ConfigKeyDoc>& config_key_table() {
    static const std::vector<ConfigKeyDoc> table = {
        {"interactions", "path", "", "raw interactions TSV (user<TAB>item[<TAB>rating[<TAB>timestamp]])"},
        {"data_dir", "path", "", "prepared split directory (train/validation/test TSVs plus stats.json)"},
        {"item_text", "path", "", "item text feature file, RGF1"},
        {"item_visual", "path", "", "item visual feature file, RGF1"},
        {"user_text", "path", "", "user text feature file, RGF1"},
        {"out_dir", "path", "", "output directory"},
        {"checkpoint_dir", "path", "", "checkpoint directory to evaluate"},
        {"k_core", "int", "5", "iterative k-core filter threshold for prepare"},
        {"ratio_train", "real", "0.8", "train fraction of the per-user split"},
        {"ratio_val", "real", "0.1", "validation fraction"},
        {"ratio_test", "real", "0.1", "test fraction"},
        {"n_users", "int", "200", "synthetic: user count"},
        {"n_items", "int", "100", "synthetic: item count"},
        {"n_clusters", "int", "5", "synthetic: latent preference clusters"},
        {"d_text", "int", "32", "synthetic: text feature dimension"},
        {"d_visual", "int", "32", "synthetic: visual feature dimension"},
        {"interactions_per_user", "int", "15", "synthetic: interactions drawn per user"},
        {"modality_noise", "real", "0.1", "synthetic: feature noise scale and off-cluster draw probability"},
        {"conflict_rotation_deg", "real", "0", "synthetic: rotation of the visual feature space, degrees"},
        {"d", "int", "32", "embedding dimension shared by all representations"},
        {"heads", "int", "2", "attention heads per modality graph encoder"},
        {"layers", "int", "2", "bipartite propagation depth (output averages layers 0..L)"},
        {"k_knn", "int", "10", "neighbors per node in the frozen modality graphs"},
        {"batch_size", "int", "256", "BPR triplets per step; alignment terms use the batch positives"},
        {"epochs", "int", "30", "training epochs"},
        {"learning_rate", "real", "0.005", "Adam learning rate"},
        {"lambda_cl", "real", "0.1", "weight of the contrastive alignment term"},
        {"lambda_ot", "real", "0.1", "weight of the transport alignment term"},
        {"lambda_reg", "real", "0.0001", "L2 penalty over all learnable tensors"},
        {"seed", "int", "1", "master seed; all substreams derive from it"},
        {"variant", "name", "full", "full|id_only|concat|sum|cmcl_only|oat_only"},
        {"patience", "int", "10", "early-stop patience on validation recall"},
        {"eval_k", "int", "10", "cutoff for recall/ndcg"},
        {"device_threads", "int", "1", "threads for row-parallel graph and evaluation work"},
        {"tau", "real", "0.2", "contrastive temperature"},
        {"cost_scale", "real", "1", "scaling factor applied to the feature-wise cost"},
        {"gamma_t", "real", "0.2", "item fusion weight of the transported text representation"},
        {"gamma_v", "real", "0.2", "item fusion weight of the transported visual representation"},
        {"gamma_u", "real", "0.2", "user fusion weight of the text representation"},
        {"epsilon", "real", "0.05", "entropic regularizer as a fraction of the mean batch cost"},
        {"sinkhorn_max_iters", "int", "200", "iteration cap per plan solve"},
        {"sinkhorn_tol", "real", "1e-06", "marginal violation tolerance (inf-norm)"},
        {"ema_decay", "real", "0.9", "smoothing of the per-batch base plans used at evaluation"},
        {"residual_penalty", "real", "0", "optional Frobenius penalty on the transport residuals"},
        {"ablate_seeds", "int", "5", "seeds per variant for the ablation table"},
        {"sweep_step", "real", "0.1", "grid step over the (gamma_t, gamma_v) simplex"},
        {"sweep_epochs", "int", "0", "epochs per sweep point (0: use epochs)"},
        {"lemma1_trials", "int", "100", "random instances for the instance-distance bound check"},
        {"theorem_trials", "int", "30", "synthetic setups for the consistency/comprehensiveness checks"},
        {"item_rep", "name", "fused", "evaluate with fused|text|visual|id item representations"},
    };
    return table;
}

std::string config_help_text() {
    std::ostringstream out;
    out << "Config keys (JSON file via --config; flags override):\n";
    for (const auto& k : config_key_table()) {
        out << "  " << k.key;
        for (std::size_t pad = std::string(k.key).size(); pad < 24; ++pad) out << ' ';
        out << "[" << k.type << ", default " << (k.default_value[0] ? k.default_value : "unset") << "] " << k.doc
            << "\n";
    }
    return out.str();
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_object()) throw std::invalid_argument("config: top-level JSON must be an object");

    std::unordered_set<std::string> known;
    for (const auto& k : config_key_table()) known.insert(k.key);
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
    }

    RunConfig cfg;
    auto get_str = [&](const char* key, std::string& dst) { if (j.contains(key)) dst = j[key].get<std::string>(); };
    get_str("interactions", cfg.interactions);
    get_str("data_dir", cfg.data_dir);
    get_str("item_text", cfg.item_text);
    get_str("item_visual", cfg.item_visual);
    get_str("user_text", cfg.user_text);
    get_str("out_dir", cfg.out_dir);
    get_str("checkpoint_dir", cfg.checkpoint_dir);
    get_str("item_rep", cfg.item_rep);

    cfg.k_core = j.value("k_core", cfg.k_core);
    cfg.ratio_train = j.value("ratio_train", cfg.ratio_train);
    cfg.ratio_val = j.value("ratio_val", cfg.ratio_val);
    cfg.ratio_test = j.value("ratio_test", cfg.ratio_test);

    cfg.synth.n_users = j.value("n_users", cfg.synth.n_users);
    cfg.synth.n_items = j.value("n_items", cfg.synth.n_items);
    cfg.synth.n_clusters = j.value("n_clusters", cfg.synth.n_clusters);
    cfg.synth.d_text = j.value("d_text", cfg.synth.d_text);
    cfg.synth.d_visual = j.value("d_visual", cfg.synth.d_visual);
    cfg.synth.interactions_per_user = j.value("interactions_per_user", cfg.synth.interactions_per_user);
    cfg.synth.modality_noise = j.value("modality_noise", cfg.synth.modality_noise);
    cfg.synth.conflict_rotation_deg = j.value("conflict_rotation_deg", cfg.synth.conflict_rotation_deg);

    // training keys share the flat namespace
    cfg.train = train_config_from_json(j.dump());

    cfg.ablate_seeds = j.value("ablate_seeds", cfg.ablate_seeds);
    cfg.sweep_step = j.value("sweep_step", cfg.sweep_step);
    cfg.sweep_epochs = j.value("sweep_epochs", cfg.sweep_epochs);
    cfg.lemma1_trials = j.value("lemma1_trials", cfg.lemma1_trials);
    cfg.theorem_trials = j.value("theorem_trials", cfg.theorem_trials);
    return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string RunConfig::to_json_text() const {
    nlohmann::json j = nlohmann::json::parse(train_config_json(train));
    auto set_path = [&](const char* key, const std::string& value) {
        if (!value.empty()) j[key] = value;
    };
    set_path("interactions", interactions);
    set_path("data_dir", data_dir);
    set_path("item_text", item_text);
    set_path("item_visual", item_visual);
    set_path("user_text", user_text);
    set_path("out_dir", out_dir);
    set_path("checkpoint_dir", checkpoint_dir);
    j["k_core"] = k_core;
    j["ratio_train"] = ratio_train;
    j["ratio_val"] = ratio_val;
    j["ratio_test"] = ratio_test;
    j["n_users"] = synth.n_users;
    j["n_items"] = synth.n_items;
    j["n_clusters"] = synth.n_clusters;
    j["d_text"] = synth.d_text;
    j["d_visual"] = synth.d_visual;
    j["interactions_per_user"] = synth.interactions_per_user;
    j["modality_noise"] = synth.modality_noise;
    j["conflict_rotation_deg"] = synth.conflict_rotation_deg;
    j["ablate_seeds"] = ablate_seeds;
    j["sweep_step"] = sweep_step;
    j["sweep_epochs"] = sweep_epochs;
    j["lemma1_trials"] = lemma1_trials;
    j["theorem_trials"] = theorem_trials;
    j["item_rep"] = item_rep;
    return j.dump(2);
}

}  // namespace recgoat
