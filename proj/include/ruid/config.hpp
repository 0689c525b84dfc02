#pragma once

#include <string>

#include <json.hpp>

#include "ruid/critic.hpp"
#include "ruid/gen.hpp"
#include "ruid/metrics.hpp"
#include "ruid/raster.hpp"
#include "ruid/rl.hpp"

// One structured config file drives every subcommand. Unknown keys are
// rejected so typos fail loudly, and the canonical-dump hash is stamped into
// every artifact a run writes.

namespace ruid::config {

// Self-contained recipe for the small RL benchmark: its own dataset scale,
// grammar, and training budgets, independent of the full-size settings.
struct DemoConfig {
    int n_train = 200;
    int n_eval = 64;
    int viewport = 64;
    int position_buckets = 8;
    int palette_colors = 4;
    int feature_grid = 4;
    int max_elements = 1;
    int pretrain_epochs = 150;
    double pretrain_lr = 1.0;
    int critic_epochs = 6;
    int critic_rollouts_per_image = 4;
    int finetune_epochs = 50;
    double finetune_lr = 0.02;
    // At demo resolution the top reward bucket is mostly above the
    // quantization ceiling, so raw scores are negative-dominated and plain
    // REINFORCE degrades; the demo recipe subtracts the running mean.
    bool baseline_subtraction = true;
    uint64_t seed = 7;

    void validate() const;
};

struct RunConfig {
    gen::GenConfig generator;
    metrics::HtmlBleuWeights metric_weights;
    critic::CriticConfig critic;
    rl::GrammarConfig grammar;
    rl::PretrainConfig pretrain;
    rl::FinetuneConfig finetune;
    DemoConfig demo;
    int viewport_w = 256;
    int viewport_h = 256;
    raster::TextMode text_mode = raster::TextMode::Box;
    int jobs = 1;

    void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::ordered_json& j); // throws ConfigError

// Missing path yields the defaults; a present file must parse and validate.
RunConfig load_run_config(const std::string& path);

std::string config_hash(const RunConfig& config);

} // namespace ruid::config
