#pragma once

#include <string>

#include "recgoat/config.hpp"
#include "recgoat/evaluator.hpp"
#include "recgoat/synthetic.hpp"
#include "recgoat/trainer.hpp"

namespace recgoat {

// Dataset directory convention: interactions.tsv, item_text.rgf1,
// item_visual.rgf1, user_text.rgf1, plus latent label TSVs for inspection.
void write_dataset_dir(const SyntheticData& data, const std::string& dir);

std::string dataset_stats_json(const InteractionTable& table, std::uint64_t seed);

// Split directory convention: train.tsv, validation.tsv, test.tsv, stats.json.
void write_split_dir(const DatasetSplit& split, const std::string& dir);
DatasetSplit load_split_dir(const std::string& dir);

struct LoadedDataset {
    DatasetSplit split;
    FeatureMatrix item_text, item_visual, user_text;
};

LoadedDataset load_dataset(const std::string& split_dir, const std::string& item_text_path,
                           const std::string& item_visual_path, const std::string& user_text_path);

// Train per the config, write checkpoint + metrics.jsonl + plan reports into
// out_dir, return the checkpoint.
Checkpoint run_training(const RunConfig& cfg, const LoadedDataset& data, const std::string& out_dir);

EvalResult evaluate_checkpoint(const Checkpoint& ckpt, const LoadedDataset& data, int k, ItemRepKind kind,
                               int n_threads);

ItemRepKind parse_item_rep(const std::string& name);

}  // namespace recgoat
