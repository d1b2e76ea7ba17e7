#pragma once

#include <string>
#include <vector>

#include "recgoat/synthetic.hpp"
#include "recgoat/trainer.hpp"

namespace recgoat {

// Flat documented key set for the JSON config file; CLI flags override file
// values. Unknown keys are rejected up front.
struct ConfigKeyDoc {
    const char* key;
    const char* type;
    const char* default_value;
    const char* doc;
};

const std::vector<ConfigKeyDoc>& config_key_table();
std::string config_help_text();

struct RunConfig {
    // paths
    std::string interactions;
    std::string data_dir;
    std::string item_text, item_visual, user_text;
    std::string out_dir;
    std::string checkpoint_dir;

    // prepare
    int k_core = 5;
    double ratio_train = 0.8, ratio_val = 0.1, ratio_test = 0.1;

    SyntheticConfig synth;
    TrainConfig train;

    // ablate / sweep / bounds
    int ablate_seeds = 5;
    double sweep_step = 0.1;
    int sweep_epochs = 0;  // 0: use train.epochs
    int lemma1_trials = 100;
    int theorem_trials = 30;
    std::string item_rep = "fused";  // evaluate: fused|text|visual|id

    static RunConfig from_json_text(const std::string& text);
    static RunConfig from_json_file(const std::string& path);
    std::string to_json_text() const;
};

}  // namespace recgoat
