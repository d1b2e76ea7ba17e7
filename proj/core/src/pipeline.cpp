#include "recgoat/pipeline.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "recgoat/logging.hpp"

namespace recgoat {

namespace fs = std::filesystem;

void write_dataset_dir(const SyntheticData& data, const std::string& dir) {
    fs::create_directories(dir);
    save_interactions(data.interactions, (fs::path(dir) / "interactions.tsv").string());
    save_feature_matrix(data.item_text, (fs::path(dir) / "item_text.rgf1").string());
    save_feature_matrix(data.item_visual, (fs::path(dir) / "item_visual.rgf1").string());
    save_feature_matrix(data.user_text, (fs::path(dir) / "user_text.rgf1").string());
    std::ofstream items(fs::path(dir) / "item_clusters.tsv", std::ios::trunc);
    for (std::size_t i = 0; i < data.item_cluster.size(); ++i) items << i << '\t' << data.item_cluster[i] << '\n';
    std::ofstream users(fs::path(dir) / "user_clusters.tsv", std::ios::trunc);
    for (std::size_t u = 0; u < data.user_cluster.size(); ++u) users << u << '\t' << data.user_cluster[u] << '\n';
}

std::string dataset_stats_json(const InteractionTable& table, std::uint64_t seed) {
    nlohmann::json j;
    j["n_users"] = table.n_users;
    j["n_items"] = table.n_items;
    j["n_interactions"] = table.records.size();
    j["sparsity"] = 1.0 - static_cast<double>(table.records.size()) /
                              (static_cast<double>(table.n_users) * static_cast<double>(table.n_items));
    j["seed"] = seed;
    return j.dump(2);
}

void write_split_dir(const DatasetSplit& split, const std::string& dir) {
    fs::create_directories(dir);
    save_interactions(split.train, (fs::path(dir) / "train.tsv").string());
    save_interactions(split.validation, (fs::path(dir) / "validation.tsv").string());
    save_interactions(split.test, (fs::path(dir) / "test.tsv").string());

    InteractionTable whole;
    whole.n_users = split.train.n_users;
    whole.n_items = split.train.n_items;
    whole.records = split.train.records;
    whole.records.insert(whole.records.end(), split.validation.records.begin(), split.validation.records.end());
    whole.records.insert(whole.records.end(), split.test.records.begin(), split.test.records.end());

    nlohmann::json j = nlohmann::json::parse(dataset_stats_json(whole, split.seed));
    j["n_train"] = split.train.records.size();
    j["n_validation"] = split.validation.records.size();
    j["n_test"] = split.test.records.size();
    std::ofstream out(fs::path(dir) / "stats.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write stats.json in " + dir);
    out << j.dump(2) << '\n';
}

namespace {

// Verbatim parser for split TSVs: indices are already contiguous.
InteractionTable load_preindexed_tsv(const std::string& path, std::int32_t n_users, std::int32_t n_items) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open split file: " + path);
    InteractionTable t;
    t.n_users = n_users;
    t.n_items = n_items;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        Interaction rec;
        long long ts = 0;
        if (std::sscanf(line.c_str(), "%d\t%d\t%lf\t%lld", &rec.user_id, &rec.item_id, &rec.rating, &ts) < 2)
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed split line");
        rec.timestamp = ts;
        if (rec.user_id < 0 || rec.user_id >= n_users || rec.item_id < 0 || rec.item_id >= n_items)
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": index outside stats.json counts");
        t.records.push_back(rec);
    }
    return t;
}

}  // namespace

DatasetSplit load_split_dir(const std::string& dir) {
    std::ifstream stats_in(fs::path(dir) / "stats.json");
    if (!stats_in) throw std::runtime_error("cannot open stats.json in " + dir);
    nlohmann::json stats = nlohmann::json::parse(stats_in);
    const std::int32_t n_users = stats.at("n_users").get<std::int32_t>();
    const std::int32_t n_items = stats.at("n_items").get<std::int32_t>();

    DatasetSplit split;
    split.seed = stats.value("seed", 0ULL);
    split.train = load_preindexed_tsv((fs::path(dir) / "train.tsv").string(), n_users, n_items);
    split.validation = load_preindexed_tsv((fs::path(dir) / "validation.tsv").string(), n_users, n_items);
    split.test = load_preindexed_tsv((fs::path(dir) / "test.tsv").string(), n_users, n_items);
    return split;
}

namespace {

std::vector<std::int64_t> load_id_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open id map: " + path);
    std::vector<std::int64_t> raw;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        long long raw_id = 0, idx = 0;
        if (std::sscanf(line.c_str(), "%lld\t%lld", &raw_id, &idx) != 2)
            throw std::runtime_error("malformed id map line in " + path);
        if (idx != static_cast<long long>(raw.size()))
            throw std::runtime_error("id map indices out of order in " + path);
        raw.push_back(raw_id);
    }
    return raw;
}

FeatureMatrix reindex_features(const FeatureMatrix& src, const std::vector<std::int64_t>& raw_ids,
                               const char* what) {
    FeatureMatrix out;
    out.rows = static_cast<std::uint32_t>(raw_ids.size());
    out.cols = src.cols;
    out.entity_kind = src.entity_kind;
    out.data.resize(static_cast<std::size_t>(out.rows) * out.cols);
    for (std::size_t i = 0; i < raw_ids.size(); ++i) {
        if (raw_ids[i] < 0 || raw_ids[i] >= static_cast<std::int64_t>(src.rows))
            throw std::runtime_error(std::string("feature file too small for ") + what + " raw id " +
                                     std::to_string(raw_ids[i]));
        std::copy(src.data.begin() + static_cast<std::ptrdiff_t>(raw_ids[i]) * src.cols,
                  src.data.begin() + (static_cast<std::ptrdiff_t>(raw_ids[i]) + 1) * src.cols,
                  out.data.begin() + static_cast<std::ptrdiff_t>(i) * out.cols);
    }
    return out;
}

}  // namespace

LoadedDataset load_dataset(const std::string& split_dir, const std::string& item_text_path,
                           const std::string& item_visual_path, const std::string& user_text_path) {
    LoadedDataset data;
    data.split = load_split_dir(split_dir);
    data.item_text = load_feature_matrix(item_text_path);
    data.item_visual = load_feature_matrix(item_visual_path);
    data.user_text = load_feature_matrix(user_text_path);

    // When the prepare step persisted id maps, gather feature rows by raw id.
    const fs::path umap = fs::path(split_dir) / "user_map.tsv";
    const fs::path imap = fs::path(split_dir) / "item_map.tsv";
    if (fs::exists(imap)) {
        auto raw_items = load_id_map(imap.string());
        data.item_text = reindex_features(data.item_text, raw_items, "item");
        data.item_visual = reindex_features(data.item_visual, raw_items, "item");
    }
    if (fs::exists(umap)) {
        auto raw_users = load_id_map(umap.string());
        data.user_text = reindex_features(data.user_text, raw_users, "user");
    }

    if (static_cast<std::int32_t>(data.item_text.rows) != data.split.train.n_items ||
        static_cast<std::int32_t>(data.item_visual.rows) != data.split.train.n_items)
        throw std::runtime_error("item feature rows do not match the split's item count");
    if (static_cast<std::int32_t>(data.user_text.rows) != data.split.train.n_users)
        throw std::runtime_error("user feature rows do not match the split's user count");
    return data;
}

Checkpoint run_training(const RunConfig& cfg, const LoadedDataset& data, const std::string& out_dir) {
    fs::create_directories(out_dir);
    TrainContext ctx = build_train_context(data.split.train, data.item_text, data.item_visual, data.user_text,
                                           cfg.train.k_knn, cfg.train.n_threads);
    TrainResult result = train(cfg.train, data.split, ctx);

    Checkpoint ckpt;
    ckpt.params = std::move(result.params);
    ckpt.plan_t = std::move(result.plan_t);
    ckpt.plan_v = std::move(result.plan_v);
    ckpt.cfg = cfg.train;
    ckpt.best_epoch = result.best_epoch;
    ckpt.val_recall = result.best_val_recall;
    ckpt.val_ndcg = result.best_val_ndcg;
    save_checkpoint(ckpt, (fs::path(out_dir) / "checkpoint").string());

    std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl", std::ios::trunc);
    for (const auto& line : result.metrics_log) metrics << line << '\n';

    if (ckpt.plan_t.epsilon > 0.0) {
        TransportPlan pt = ckpt.plan_t;
        pt.residual = ckpt.params.residual_t;
        TransportPlan pv = ckpt.plan_v;
        pv.residual = ckpt.params.residual_v;
        std::ofstream report(fs::path(out_dir) / "plan_report.txt", std::ios::trunc);
        report << plan_report(pt) << plan_report(pv);
        save_feature_matrix(FeatureMatrix::from_dense(pt.base), (fs::path(out_dir) / "plan_t.rgf1").string());
        save_feature_matrix(FeatureMatrix::from_dense(pv.base), (fs::path(out_dir) / "plan_v.rgf1").string());
    }
    if (result.diverged) log::warn("training diverged; checkpoint holds the last good state");
    return ckpt;
}

EvalResult evaluate_checkpoint(const Checkpoint& ckpt, const LoadedDataset& data, int k, ItemRepKind kind,
                               int n_threads) {
    TrainContext ctx = build_train_context(data.split.train, data.item_text, data.item_visual, data.user_text,
                                           ckpt.cfg.k_knn, n_threads);
    Representations reps =
        forward_representations_as(ckpt.params, ctx, ckpt.cfg, ckpt.plan_t, ckpt.plan_v, kind);
    return evaluate_rankings(reps.users, reps.items, data.split.test,
                             {&data.split.train, &data.split.validation}, k, n_threads);
}

ItemRepKind parse_item_rep(const std::string& name) {
    if (name == "fused") return ItemRepKind::Fused;
    if (name == "text") return ItemRepKind::Text;
    if (name == "visual") return ItemRepKind::Visual;
    if (name == "id") return ItemRepKind::Id;
    throw std::invalid_argument("unknown item representation: " + name);
}

}  // namespace recgoat
