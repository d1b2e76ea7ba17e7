#include "recgoat/interactions.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "recgoat/logging.hpp"
#include "recgoat/rng.hpp"

namespace recgoat {

namespace {

struct PairHash {
    std::size_t operator()(const std::pair<std::int32_t, std::int32_t>& p) const {
        return splitmix64((static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.first)) << 32) |
                          static_cast<std::uint32_t>(p.second));
    }
};

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

[[noreturn]] void parse_fail(const std::string& path, std::size_t line_no, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

std::int64_t parse_int(const std::string& s, const std::string& path, std::size_t line_no, const char* field) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        parse_fail(path, line_no, std::string("malformed ") + field + " '" + s + "'");
    return v;
}

double parse_real(const std::string& s, const std::string& path, std::size_t line_no, const char* field) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        parse_fail(path, line_no, std::string("malformed ") + field + " '" + s + "'");
    }
}

}  // namespace

void InteractionTable::validate() const {
    if (n_users <= 0 || n_items <= 0) throw std::runtime_error("interaction table has no users or items");
    std::unordered_set<std::pair<std::int32_t, std::int32_t>, PairHash> seen;
    seen.reserve(records.size() * 2);
    for (const auto& r : records) {
        if (r.user_id < 0 || r.user_id >= n_users) throw std::runtime_error("user index out of range");
        if (r.item_id < 0 || r.item_id >= n_items) throw std::runtime_error("item index out of range");
        if (r.rating < 1.0 || r.rating > 5.0) throw std::runtime_error("rating outside [1,5]");
        if (!seen.insert({r.user_id, r.item_id}).second)
            throw std::runtime_error("duplicate (user,item) pair (" + std::to_string(r.user_id) + "," +
                                     std::to_string(r.item_id) + ")");
    }
}

LoadedInteractions load_interactions(const std::string& path, bool persist_maps) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open interactions file: " + path);

    LoadedInteractions out;
    std::unordered_map<std::int64_t, std::int32_t> user_index, item_index;
    std::unordered_set<std::pair<std::int32_t, std::int32_t>, PairHash> seen;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto fields = split_tabs(line);
        if (fields.size() < 2 || fields.size() > 4)
            parse_fail(path, line_no, "expected 2-4 tab-separated fields, got " + std::to_string(fields.size()));

        const std::int64_t raw_user = parse_int(fields[0], path, line_no, "user id");
        const std::int64_t raw_item = parse_int(fields[1], path, line_no, "item id");

        Interaction rec;
        if (fields.size() >= 3 && !fields[2].empty()) {
            rec.rating = parse_real(fields[2], path, line_no, "rating");
            if (rec.rating < 1.0 || rec.rating > 5.0)
                parse_fail(path, line_no, "rating " + fields[2] + " outside [1,5]");
        }
        if (fields.size() == 4 && !fields[3].empty())
            rec.timestamp = parse_int(fields[3], path, line_no, "timestamp");

        auto [uit, unew] = user_index.try_emplace(raw_user, static_cast<std::int32_t>(user_index.size()));
        if (unew) out.user_raw_ids.push_back(raw_user);
        auto [iit, inew] = item_index.try_emplace(raw_item, static_cast<std::int32_t>(item_index.size()));
        if (inew) out.item_raw_ids.push_back(raw_item);
        rec.user_id = uit->second;
        rec.item_id = iit->second;
        if (!seen.insert({rec.user_id, rec.item_id}).second)
            parse_fail(path, line_no,
                       "duplicate (user,item) pair (" + std::to_string(raw_user) + "," + std::to_string(raw_item) + ")");
        out.table.records.push_back(rec);
    }
    if (out.table.records.empty()) throw std::runtime_error("empty interactions file: " + path);
    out.table.n_users = static_cast<std::int32_t>(out.user_raw_ids.size());
    out.table.n_items = static_cast<std::int32_t>(out.item_raw_ids.size());

    if (persist_maps) {
        save_id_map(out.user_raw_ids, path + ".user_map.tsv");
        save_id_map(out.item_raw_ids, path + ".item_map.tsv");
    }
    return out;
}

void save_interactions(const InteractionTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    char buf[128];
    for (const auto& r : table.records) {
        int n = std::snprintf(buf, sizeof(buf), "%d\t%d\t%.17g\t%lld\n", r.user_id, r.item_id, r.rating,
                              static_cast<long long>(r.timestamp));
        out.write(buf, n);
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

void save_id_map(const std::vector<std::int64_t>& raw_ids, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    for (std::size_t i = 0; i < raw_ids.size(); ++i)
        out << raw_ids[i] << '\t' << i << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

InteractionTable apply_k_core(const InteractionTable& table, int k) {
    return apply_k_core_mapped(table, k).table;
}

KCoreResult apply_k_core_mapped(const InteractionTable& table, int k) {
    if (k < 1) throw std::invalid_argument("k-core requires k >= 1");

    std::vector<char> user_alive(table.n_users, 1), item_alive(table.n_items, 1);
    std::vector<int> user_deg(table.n_users, 0), item_deg(table.n_items, 0);
    for (const auto& r : table.records) {
        ++user_deg[r.user_id];
        ++item_deg[r.item_id];
    }

    bool changed = true;
    while (changed) {
        changed = false;
        std::fill(user_deg.begin(), user_deg.end(), 0);
        std::fill(item_deg.begin(), item_deg.end(), 0);
        for (const auto& r : table.records) {
            if (user_alive[r.user_id] && item_alive[r.item_id]) {
                ++user_deg[r.user_id];
                ++item_deg[r.item_id];
            }
        }
        for (std::int32_t u = 0; u < table.n_users; ++u)
            if (user_alive[u] && user_deg[u] < k) { user_alive[u] = 0; changed = true; }
        for (std::int32_t i = 0; i < table.n_items; ++i)
            if (item_alive[i] && item_deg[i] < k) { item_alive[i] = 0; changed = true; }
    }

    std::vector<std::int32_t> user_new(table.n_users, -1), item_new(table.n_items, -1);
    std::int32_t nu = 0, ni = 0;
    for (std::int32_t u = 0; u < table.n_users; ++u)
        if (user_alive[u]) user_new[u] = nu++;
    for (std::int32_t i = 0; i < table.n_items; ++i)
        if (item_alive[i]) item_new[i] = ni++;

    KCoreResult out;
    out.table.n_users = nu;
    out.table.n_items = ni;
    for (const auto& r : table.records) {
        if (user_alive[r.user_id] && item_alive[r.item_id]) {
            Interaction rec = r;
            rec.user_id = user_new[r.user_id];
            rec.item_id = item_new[r.item_id];
            out.table.records.push_back(rec);
        }
    }
    if (out.table.records.empty() || nu == 0 || ni == 0)
        throw std::runtime_error("dataset eliminated by k-core (k=" + std::to_string(k) + ")");
    out.kept_users.reserve(nu);
    out.kept_items.reserve(ni);
    for (std::int32_t u = 0; u < table.n_users; ++u)
        if (user_alive[u]) out.kept_users.push_back(u);
    for (std::int32_t i = 0; i < table.n_items; ++i)
        if (item_alive[i]) out.kept_items.push_back(i);
    return out;
}

DatasetSplit split_dataset(const InteractionTable& table, double r_train, double r_val, double r_test,
                           std::uint64_t seed) {
    if (std::abs(r_train + r_val + r_test - 1.0) > 1e-9)
        throw std::invalid_argument("split ratios must sum to 1");
    if (r_train <= 0.0) throw std::invalid_argument("train ratio must be positive");

    std::vector<std::vector<std::size_t>> per_user(table.n_users);
    for (std::size_t idx = 0; idx < table.records.size(); ++idx)
        per_user[table.records[idx].user_id].push_back(idx);

    // 0 train, 1 val, 2 test
    std::vector<int> bucket(table.records.size(), 0);
    for (std::int32_t u = 0; u < table.n_users; ++u) {
        auto& idxs = per_user[u];
        if (idxs.empty()) continue;
        auto rng = substream(seed, "split", static_cast<std::uint64_t>(u));
        std::shuffle(idxs.begin(), idxs.end(), rng);
        const std::size_t n = idxs.size();
        const std::size_t n_train = static_cast<std::size_t>(std::ceil(r_train * static_cast<double>(n)));
        for (std::size_t j = 0; j < n; ++j) {
            if (j < n_train) bucket[idxs[j]] = 0;
            else bucket[idxs[j]] = ((j - n_train) % 2 == 0) ? 1 : 2;  // alternate val, test
        }
    }

    // Promote val/test records whose item has no train occurrence, so every
    // evaluated item exists in the training graph.
    std::vector<int> item_train_deg(table.n_items, 0);
    for (std::size_t idx = 0; idx < table.records.size(); ++idx)
        if (bucket[idx] == 0) ++item_train_deg[table.records[idx].item_id];
    std::vector<std::size_t> order(table.records.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ra = table.records[a];
        const auto& rb = table.records[b];
        return std::tie(ra.user_id, ra.item_id) < std::tie(rb.user_id, rb.item_id);
    });
    int promoted = 0;
    for (std::size_t idx : order) {
        if (bucket[idx] != 0 && item_train_deg[table.records[idx].item_id] == 0) {
            bucket[idx] = 0;
            ++item_train_deg[table.records[idx].item_id];
            ++promoted;
        }
    }
    if (promoted > 0)
        log::info("split: promoted " + std::to_string(promoted) + " records to train for item coverage");

    DatasetSplit split;
    split.seed = seed;
    split.train.n_users = split.validation.n_users = split.test.n_users = table.n_users;
    split.train.n_items = split.validation.n_items = split.test.n_items = table.n_items;
    for (std::size_t idx = 0; idx < table.records.size(); ++idx) {
        const auto& r = table.records[idx];
        if (bucket[idx] == 0) split.train.records.push_back(r);
        else if (bucket[idx] == 1) split.validation.records.push_back(r);
        else split.test.records.push_back(r);
    }
    return split;
}

}  // namespace recgoat
