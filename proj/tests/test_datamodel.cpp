#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <thread>
#include <unistd.h>

#include "recgoat/feature_matrix.hpp"
#include "recgoat/interactions.hpp"
#include "recgoat/prompts.hpp"
#include "recgoat/rng.hpp"
#include "recgoat/synthetic.hpp"

// httplib must follow the Eigen-including headers (macro clash otherwise)
#include <httplib.h>
#include <nlohmann/json.hpp>

using namespace recgoat;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static int counter = 0;
    fs::path dir = fs::temp_directory_path() / ("recgoat_dm_" + std::to_string(::getpid()) + "_" +
                                                std::to_string(counter++));
    fs::create_directories(dir);
    return dir;
}

std::string write_file(const fs::path& dir, const std::string& name, const std::string& content) {
    fs::path p = dir / name;
    std::ofstream out(p);
    out << content;
    return p.string();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("load_interactions parses and remaps a small file") {
    auto dir = temp_dir();
    auto path = write_file(dir, "tiny.tsv",
                           "# comment\n"
                           "10\t100\t5\t1111\n"
                           "10\t200\t3\t1112\n"
                           "20\t100\n");
    auto loaded = load_interactions(path);
    CHECK(loaded.table.n_users == 2);
    CHECK(loaded.table.n_items == 2);
    CHECK(loaded.table.records.size() == 3);
    CHECK(loaded.table.records[0].user_id == 0);
    CHECK(loaded.table.records[0].item_id == 0);
    CHECK(loaded.table.records[0].rating == doctest::Approx(5.0));
    CHECK(loaded.table.records[2].rating == doctest::Approx(1.0));  // default when absent
    CHECK(loaded.user_raw_ids == std::vector<std::int64_t>{10, 20});
    // mapping tables persisted alongside
    CHECK(fs::exists(path + ".user_map.tsv"));
    CHECK(fs::exists(path + ".item_map.tsv"));
}

TEST_CASE("load_interactions rejects duplicates, bad ratings, empty files") {
    auto dir = temp_dir();
    auto dup = write_file(dir, "dup.tsv", "1\t2\n1\t2\n");
    CHECK_THROWS_WITH_AS(static_cast<void>(load_interactions(dup)),
                         doctest::Contains("duplicate (user,item) pair (1,2)"), std::runtime_error);

    auto bad = write_file(dir, "bad.tsv", "1\t2\t9.5\n");
    CHECK_THROWS_WITH_AS(static_cast<void>(load_interactions(bad)), doctest::Contains(":1:"), std::runtime_error);

    auto malformed = write_file(dir, "malformed.tsv", "1\t2\n1\tx7\n");
    CHECK_THROWS_WITH_AS(static_cast<void>(load_interactions(malformed)), doctest::Contains(":2:"),
                         std::runtime_error);

    auto empty = write_file(dir, "empty.tsv", "# nothing\n");
    CHECK_THROWS(static_cast<void>(load_interactions(empty)));
}

TEST_CASE("load_interactions handles a Baby-scale synthetic file") {
    auto dir = temp_dir();
    const int n_users = 19445, n_items = 7050;
    const long n_inter = 160792;
    fs::path p = dir / "baby_shaped.tsv";
    {
        std::ofstream out(p);
        long written = 0;
        for (long k = 0; written < n_inter; ++k) {
            const long u = k % n_users, t = k / n_users;
            const long i = (t + u) % n_items;
            out << u << '\t' << i << '\t' << (1 + (k % 5)) << '\t' << k << '\n';
            ++written;
        }
    }
    auto loaded = load_interactions(p.string(), false);
    CHECK(loaded.table.n_users == n_users);
    CHECK(loaded.table.n_items == n_items);
    CHECK(loaded.table.records.size() == static_cast<std::size_t>(n_inter));
    loaded.table.validate();
}

TEST_CASE("apply_k_core identity at k=1") {
    InteractionTable t;
    t.n_users = 2;
    t.n_items = 2;
    t.records = {{0, 0, 1.0, 0}, {1, 1, 1.0, 0}};
    auto out = apply_k_core(t, 1);
    CHECK(out.records.size() == 2);
    CHECK(out.n_users == 2);
    CHECK(out.n_items == 2);
}

TEST_CASE("apply_k_core star graph collapses at k=2") {
    InteractionTable t;
    t.n_users = 1;
    t.n_items = 5;
    for (int i = 0; i < 5; ++i) t.records.push_back({0, i, 1.0, 0});
    CHECK_THROWS_WITH_AS(static_cast<void>(apply_k_core(t, 2)), doctest::Contains("eliminated by k-core"),
                         std::runtime_error);
}

namespace {

// naive repeat-until-stable reference
InteractionTable naive_k_core(InteractionTable t, int k) {
    while (true) {
        std::vector<int> du(t.n_users, 0), di(t.n_items, 0);
        for (auto& r : t.records) {
            ++du[r.user_id];
            ++di[r.item_id];
        }
        std::vector<Interaction> keep;
        for (auto& r : t.records)
            if (du[r.user_id] >= k && di[r.item_id] >= k) keep.push_back(r);
        if (keep.size() == t.records.size()) break;
        t.records = keep;
    }
    // compact
    std::vector<std::int32_t> umap(t.n_users, -1), imap(t.n_items, -1);
    std::int32_t nu = 0, ni = 0;
    for (std::int32_t u = 0; u < t.n_users; ++u)
        for (auto& r : t.records)
            if (r.user_id == u && umap[u] < 0) umap[u] = nu++;
    for (std::int32_t i = 0; i < t.n_items; ++i)
        for (auto& r : t.records)
            if (r.item_id == i && imap[i] < 0) imap[i] = ni++;
    for (auto& r : t.records) {
        r.user_id = umap[r.user_id];
        r.item_id = imap[r.item_id];
    }
    t.n_users = nu;
    t.n_items = ni;
    return t;
}

}  // namespace

TEST_CASE("apply_k_core matches the naive fixpoint oracle") {
    auto rng = substream(7, "kcore-test");
    InteractionTable t;
    t.n_users = 50;
    t.n_items = 30;
    std::uniform_int_distribution<int> pu(0, 49), pi(0, 29);
    std::set<std::pair<int, int>> seen;
    while (t.records.size() < 300) {
        int u = pu(rng), i = pi(rng);
        if (seen.insert({u, i}).second) t.records.push_back({u, i, 1.0, 0});
    }
    auto ours = apply_k_core(t, 3);
    auto ref = naive_k_core(t, 3);
    REQUIRE(ours.records.size() == ref.records.size());
    CHECK(ours.n_users == ref.n_users);
    CHECK(ours.n_items == ref.n_items);
    for (std::size_t i = 0; i < ours.records.size(); ++i) {
        CHECK(ours.records[i].user_id == ref.records[i].user_id);
        CHECK(ours.records[i].item_id == ref.records[i].item_id);
    }
    // fixpoint property: all surviving degrees >= k
    std::vector<int> du(ours.n_users, 0), di(ours.n_items, 0);
    for (auto& r : ours.records) {
        ++du[r.user_id];
        ++di[r.item_id];
    }
    for (int d : du) CHECK(d >= 3);
    for (int d : di) CHECK(d >= 3);
}

namespace {

// user 0 holds n interactions; single-interaction anchor users give every
// item train support so the coverage promotion never rewrites user 0's split
InteractionTable anchored_table(int n) {
    InteractionTable t;
    t.n_users = 1 + n;
    t.n_items = n;
    for (int i = 0; i < n; ++i) t.records.push_back({0, i, 1.0, 0});
    for (int i = 0; i < n; ++i) t.records.push_back({1 + i, i, 1.0, 0});
    return t;
}

std::size_t user0_count(const InteractionTable& t) {
    std::size_t n = 0;
    for (const auto& r : t.records) n += r.user_id == 0;
    return n;
}

}  // namespace

TEST_CASE("split_dataset rounding: 10 interactions -> 8/1/1, 5 -> 4/1/0") {
    auto s10 = split_dataset(anchored_table(10), 0.8, 0.1, 0.1, 3);
    CHECK(user0_count(s10.train) == 8);
    CHECK(user0_count(s10.validation) == 1);
    CHECK(user0_count(s10.test) == 1);

    auto s5 = split_dataset(anchored_table(5), 0.8, 0.1, 0.1, 3);
    CHECK(user0_count(s5.train) == 4);
    CHECK(user0_count(s5.validation) == 1);
    CHECK(user0_count(s5.test) == 0);
}

TEST_CASE("split_dataset determinism and partition invariants") {
    auto rng = substream(11, "split-test");
    InteractionTable t;
    t.n_users = 40;
    t.n_items = 25;
    std::uniform_int_distribution<int> pi(0, 24);
    for (int u = 0; u < 40; ++u) {
        std::set<int> items;
        while (items.size() < 8) items.insert(pi(rng));
        for (int i : items) t.records.push_back({u, i, 1.0, 0});
    }
    auto a = split_dataset(t, 0.8, 0.1, 0.1, 5);
    auto b = split_dataset(t, 0.8, 0.1, 0.1, 5);
    REQUIRE(a.train.records.size() == b.train.records.size());
    for (std::size_t i = 0; i < a.train.records.size(); ++i)
        CHECK(a.train.records[i].item_id == b.train.records[i].item_id);

    // disjoint union equals the source
    auto key = [](const Interaction& r) { return std::pair<int, int>(r.user_id, r.item_id); };
    std::set<std::pair<int, int>> all;
    for (auto* part : {&a.train, &a.validation, &a.test})
        for (auto& r : part->records) CHECK(all.insert(key(r)).second);
    CHECK(all.size() == t.records.size());

    // every val/test user and item occurs in train
    std::set<int> train_users, train_items;
    for (auto& r : a.train.records) {
        train_users.insert(r.user_id);
        train_items.insert(r.item_id);
    }
    for (auto* part : {&a.validation, &a.test})
        for (auto& r : part->records) {
            CHECK(train_users.count(r.user_id));
            CHECK(train_items.count(r.item_id));
        }

    CHECK_THROWS(static_cast<void>(split_dataset(t, 0.8, 0.1, 0.2, 5)));
}

TEST_CASE("RGF1 round-trip is bit-identical") {
    auto dir = temp_dir();
    FeatureMatrix m;
    m.rows = 2;
    m.cols = 3;
    m.data = {1.5f, -2.25f, 0.0f, 3.75f, 1e-30f, 42.0f};
    auto p1 = (dir / "m1.rgf1").string();
    auto p2 = (dir / "m2.rgf1").string();
    save_feature_matrix(m, p1);
    auto loaded = load_feature_matrix(p1);
    save_feature_matrix(loaded, p2);
    CHECK(read_file(p1) == read_file(p2));
    CHECK(loaded.data == m.data);
}

TEST_CASE("RGF1 rejects truncation, trailing bytes, bad magic") {
    auto dir = temp_dir();
    FeatureMatrix m;
    m.rows = 2;
    m.cols = 2;
    m.data = {1, 2, 3, 4};
    auto p = (dir / "m.rgf1").string();
    save_feature_matrix(m, p);

    std::string bytes = read_file(p);
    write_file(dir, "trunc.rgf1", bytes.substr(0, bytes.size() - 2));
    CHECK_THROWS_WITH_AS(static_cast<void>(load_feature_matrix((dir / "trunc.rgf1").string())),
                         doctest::Contains("size mismatch"), std::runtime_error);

    write_file(dir, "long.rgf1", bytes + "xx");
    CHECK_THROWS_WITH_AS(static_cast<void>(load_feature_matrix((dir / "long.rgf1").string())),
                         doctest::Contains("size mismatch"), std::runtime_error);

    std::string wrong = bytes;
    wrong[0] = 'X';
    write_file(dir, "magic.rgf1", wrong);
    CHECK_THROWS_WITH_AS(static_cast<void>(load_feature_matrix((dir / "magic.rgf1").string())),
                         doctest::Contains("bad magic"), std::runtime_error);
}

TEST_CASE("RGF1 handles a 7050x4096 visual matrix") {
    auto dir = temp_dir();
    FeatureMatrix m;
    m.rows = 7050;
    m.cols = 4096;
    m.data.assign(static_cast<std::size_t>(m.rows) * m.cols, 0.0f);
    for (std::size_t i = 0; i < m.data.size(); i += 977) m.data[i] = static_cast<float>(i % 31) * 0.5f;
    auto p = (dir / "visual.rgf1").string();
    save_feature_matrix(m, p);
    auto loaded = load_feature_matrix(p);
    CHECK(loaded.rows == 7050);
    CHECK(loaded.cols == 4096);
    CHECK(loaded.data == m.data);
    fs::remove(p);
}

TEST_CASE("generate_synthetic: zero noise and zero rotation align text and visual") {
    SyntheticConfig cfg;
    cfg.n_users = 20;
    cfg.n_items = 30;
    cfg.n_clusters = 3;
    cfg.d_text = 8;
    cfg.d_visual = 12;
    cfg.interactions_per_user = 5;
    cfg.modality_noise = 0.0;
    cfg.conflict_rotation_deg = 0.0;
    auto data = generate_synthetic(cfg, 9);
    for (int i = 0; i < cfg.n_items; ++i)
        for (int c = 0; c < cfg.d_text; ++c)
            CHECK(data.item_text.at(i, c) == doctest::Approx(data.item_visual.at(i, c)).epsilon(1e-6));
    for (int i = 0; i < cfg.n_items; ++i)
        for (int c = cfg.d_text; c < cfg.d_visual; ++c) CHECK(data.item_visual.at(i, c) == doctest::Approx(0.0));
}

TEST_CASE("generate_synthetic determinism and cluster preference") {
    SyntheticConfig cfg;
    cfg.n_users = 50;
    cfg.n_items = 100;
    cfg.n_clusters = 5;
    cfg.d_text = 16;
    cfg.d_visual = 16;
    cfg.interactions_per_user = 15;
    cfg.modality_noise = 0.1;
    cfg.conflict_rotation_deg = 30.0;

    auto a = generate_synthetic(cfg, 4);
    auto b = generate_synthetic(cfg, 4);
    CHECK(a.item_text.data == b.item_text.data);
    CHECK(a.item_visual.data == b.item_visual.data);
    CHECK(a.user_text.data == b.user_text.data);
    REQUIRE(a.interactions.records.size() == b.interactions.records.size());
    for (std::size_t i = 0; i < a.interactions.records.size(); ++i)
        CHECK(a.interactions.records[i].item_id == b.interactions.records[i].item_id);

    long in_cluster = 0;
    for (const auto& r : a.interactions.records)
        if (a.item_cluster[r.item_id] == a.user_cluster[r.user_id]) ++in_cluster;
    CHECK(static_cast<double>(in_cluster) / a.interactions.records.size() >= 0.9);

    a.interactions.validate();  // no duplicate pairs
    SyntheticConfig bad = cfg;
    bad.n_clusters = 0;
    CHECK_THROWS(static_cast<void>(generate_synthetic(bad, 1)));
}

TEST_CASE("build_user_prompt renders ids, history, steps, and the output stanza in order") {
    std::vector<std::pair<std::int32_t, std::string>> history = {{7, "red stroller"}, {9, "baby monitor"}};
    auto rec = build_user_prompt(42, history);
    const std::string& p = rec.prompt_text;
    auto pos_user = p.find("User ID: 42");
    auto pos_h0 = p.find("- Item 7: red stroller");
    auto pos_h1 = p.find("- Item 9: baby monitor");
    auto pos_s1 = p.find("Identify Common Attributes Across Items");
    auto pos_s2 = p.find("Summarize Preferences Across Multiple Dimensions");
    auto pos_think = p.find("<think>");
    auto pos_answer = p.find("<answer>");
    for (auto pos : {pos_user, pos_h0, pos_h1, pos_s1, pos_s2, pos_think, pos_answer})
        REQUIRE(pos != std::string::npos);
    CHECK(pos_user < pos_h0);
    CHECK(pos_h0 < pos_h1);
    CHECK(pos_h1 < pos_s1);
    CHECK(pos_s1 < pos_s2);
    CHECK(pos_s2 < pos_think);
    CHECK(pos_think < pos_answer);

    CHECK_THROWS(static_cast<void>(build_user_prompt(1, {})));
}

TEST_CASE("load_prompt_template reads a custom template with the placeholders") {
    auto dir = temp_dir();
    auto path = write_file(dir, "tmpl.txt", "Customer {user_id} bought:\n{history}\nSummarize.");
    auto tmpl = load_prompt_template(path);
    auto rec = build_user_prompt(5, {{1, "thing"}}, tmpl);
    CHECK(rec.prompt_text.find("Customer 5 bought:") != std::string::npos);
    CHECK(rec.prompt_text.find("- Item 1: thing") != std::string::npos);
    CHECK_THROWS(static_cast<void>(load_prompt_template((dir / "missing.txt").string())));
}

TEST_CASE("build_user_prompt preserves a 50-item history") {
    std::vector<std::pair<std::int32_t, std::string>> history;
    for (int i = 0; i < 50; ++i) history.emplace_back(1000 + i, "thing " + std::to_string(i));
    auto rec = build_user_prompt(1, history);
    std::size_t prev = 0;
    for (int i = 0; i < 50; ++i) {
        auto pos = rec.prompt_text.find("- Item " + std::to_string(1000 + i) + ": thing " + std::to_string(i));
        REQUIRE(pos != std::string::npos);
        CHECK(pos > prev);
        prev = pos;
    }
}

namespace {

struct MockServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;

    explicit MockServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
        server.Post("/v1/chat/completions", std::move(handler));
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~MockServer() {
        server.stop();
        thread.join();
    }
    ChatClientConfig client() const {
        ChatClientConfig cfg;
        cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
        cfg.backoff_initial_ms = 5;
        return cfg;
    }
};

std::string chat_body(const std::string& content) {
    nlohmann::json j;
    j["choices"] = {{{"message", {{"role", "assistant"}, {"content", content}}}}};
    return j.dump();
}

}  // namespace

TEST_CASE("fetch_user_preference extracts the answer block") {
    MockServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content(chat_body("<think>hmm</think><answer>likes red strollers</answer>"), "application/json");
    });
    PromptRecord rec;
    rec.user_id = 3;
    rec.prompt_text = "prompt";
    auto out = fetch_user_preference(rec, server.client());
    CHECK(out.answer_text == "likes red strollers");
    CHECK(out.answer_structured);
}

TEST_CASE("fetch_user_preference retries transient failures") {
    std::atomic<int> calls{0};
    MockServer server([&](const httplib::Request&, httplib::Response& res) {
        if (++calls <= 3) {
            res.status = 500;
            return;
        }
        res.set_content(chat_body("<answer>ok</answer>"), "application/json");
    });
    PromptRecord rec;
    rec.prompt_text = "p";
    auto out = fetch_user_preference(rec, server.client());
    CHECK(out.answer_text == "ok");
    CHECK(calls == 4);
}

TEST_CASE("fetch_user_preference keeps unstructured answers verbatim") {
    MockServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content(chat_body("no tags at all"), "application/json");
    });
    PromptRecord rec;
    rec.prompt_text = "p";
    auto out = fetch_user_preference(rec, server.client());
    CHECK(out.answer_text == "no tags at all");
    CHECK_FALSE(out.answer_structured);
}

TEST_CASE("fetch_user_preference gives up after max retries") {
    MockServer server([](const httplib::Request&, httplib::Response& res) { res.status = 503; });
    PromptRecord rec;
    rec.prompt_text = "p";
    auto cfg = server.client();
    cfg.max_retries = 2;
    CHECK_THROWS_WITH_AS(static_cast<void>(fetch_user_preference(rec, cfg)), doctest::Contains("3 attempts"),
                         std::runtime_error);
}

TEST_CASE("fetch_user_preferences runs a bounded concurrent batch") {
    MockServer server([](const httplib::Request& req, httplib::Response& res) {
        auto j = nlohmann::json::parse(req.body);
        const std::string prompt = j["messages"][0]["content"].get<std::string>();
        res.set_content(chat_body("<answer>echo " + prompt + "</answer>"), "application/json");
    });
    std::vector<PromptRecord> records(6);
    for (int i = 0; i < 6; ++i) {
        records[i].user_id = i;
        records[i].prompt_text = "u" + std::to_string(i);
    }
    auto cfg = server.client();
    cfg.max_concurrency = 3;
    auto out = fetch_user_preferences(records, cfg);
    REQUIRE(out.size() == 6);
    for (int i = 0; i < 6; ++i) CHECK(out[i].answer_text == "echo u" + std::to_string(i));
}
