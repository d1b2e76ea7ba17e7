#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace recgoat {

struct Interaction {
    std::int32_t user_id = 0;
    std::int32_t item_id = 0;
    double rating = 1.0;       // in [1,5]; 1.0 when the dataset has no ratings
    std::int64_t timestamp = 0;
};

// User/item/rating/timestamp records with contiguous 0-based indices.
struct InteractionTable {
    std::vector<Interaction> records;
    std::int32_t n_users = 0;
    std::int32_t n_items = 0;

    void validate() const;  // throws on invariant violations
};

struct LoadedInteractions {
    InteractionTable table;
    // raw id of each remapped index (position = contiguous index)
    std::vector<std::int64_t> user_raw_ids;
    std::vector<std::int64_t> item_raw_ids;
};

// Parses the interactions TSV: user<TAB>item[<TAB>rating[<TAB>timestamp]].
// '#'-prefixed lines are skipped. Raw ids are remapped to contiguous 0-based
// indices in order of first appearance; the mapping tables are persisted as
// two-column TSVs next to the input (<path>.user_map.tsv / <path>.item_map.tsv)
// unless persist_maps is false.
LoadedInteractions load_interactions(const std::string& path, bool persist_maps = true);

void save_interactions(const InteractionTable& table, const std::string& path);
void save_id_map(const std::vector<std::int64_t>& raw_ids, const std::string& path);

// Iteratively removes users/items with fewer than k interactions until the
// fixpoint, then re-compacts indices (order preserving).
InteractionTable apply_k_core(const InteractionTable& table, int k);

// Same filter, also reporting the surviving original indices (position =
// compacted index), for composing id maps across the pipeline.
struct KCoreResult {
    InteractionTable table;
    std::vector<std::int32_t> kept_users;
    std::vector<std::int32_t> kept_items;
};
KCoreResult apply_k_core_mapped(const InteractionTable& table, int k);

struct DatasetSplit {
    InteractionTable train;
    InteractionTable validation;
    InteractionTable test;
    std::uint64_t seed = 0;
};

// Per-user random partition. Train size is ceil(r_train * n) per user and the
// remainder alternates validation, test, validation, ... Records in
// validation/test whose item never occurs in train are promoted to train so
// that every evaluated user and item is covered by the training graph.
DatasetSplit split_dataset(const InteractionTable& table, double r_train, double r_val, double r_test,
                           std::uint64_t seed);

}  // namespace recgoat
