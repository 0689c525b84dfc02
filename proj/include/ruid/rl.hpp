#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ruid/critic.hpp"
#include "ruid/gen.hpp"
#include "ruid/raster.hpp"
#include "ruid/rng.hpp"

// REINFORCE harness: a conditional autoregressive policy over a bucketed
// element grammar, with analytic softmax gradients, supervised pretraining,
// and the critic-scaled fine-tuning loop. The policy is linear per grammar
// slot, so every gradient the loop uses can be checked against finite
// differences, which a full encoder-decoder would not allow at this scale.

namespace ruid::rl {

// Grammar slots in generation order. Kind also hosts EOS; Color is skipped
// for buttons.
enum class Slot { Kind, Left, Top, Width, Height, Color };
inline constexpr int kNumSlots = 6;

// Rows of the Kind slot.
inline constexpr int kKindRect = 0;
inline constexpr int kKindEllipse = 1;
inline constexpr int kKindButton = 2;
inline constexpr int kKindEos = 3;

struct GrammarConfig {
    int position_buckets = 8; // B
    int palette_colors = 8;   // C
    int feature_grid = 16;    // G
    int max_elements = 6;
    int max_len = 900;

    void validate() const; // throws ConfigError

    // Fixed geometry ranges the buckets cover (mirrors the dataset recipe).
    static constexpr double kLeftLo = 0, kLeftSpan = 80;
    static constexpr double kTopLo = 0, kTopSpan = 80;
    static constexpr double kSizeLo = 10, kSizeSpan = 20;
};

// Bucket centers the detokenizer emits.
double position_center(const GrammarConfig& g, Slot slot, int bucket);
Rgb palette_color(const GrammarConfig& g, int index); // evenly spaced hues, V=0.8

struct PolicyToken {
    Slot slot = Slot::Kind;
    int row = 0;

    bool operator==(const PolicyToken&) const = default;
};

std::string token_name(const PolicyToken& token);

// Image conditioning: G x G mean-pooled RGB grid, channels on [0,1],
// flattened to length 3G^2.
std::vector<double> image_features(const raster::RasterImage& image, int grid);

// One linear softmax per slot over that slot's rows; input is the feature
// vector plus a trailing bias 1.
struct ToyPolicy {
    GrammarConfig grammar;
    std::array<std::vector<std::vector<double>>, kNumSlots> weights; // [slot][row][col]

    int rows(Slot slot) const;
    int cols() const; // 3G^2 + 1

    size_t param_count() const;
    double get_param(size_t index) const;
    void set_param(size_t index, double value);

    static ToyPolicy zero(const GrammarConfig& grammar);
    static ToyPolicy random(const GrammarConfig& grammar, uint64_t seed, double scale = 0.1);
};

using PolicyGradient = std::array<std::vector<std::vector<double>>, kNumSlots>;

PolicyGradient zero_gradient(const ToyPolicy& policy);

// weights += alpha * gradient
void axpy_params(ToyPolicy& policy, const PolicyGradient& gradient, double alpha);

// Probability over a slot's rows given the sampling state. Rows the grammar
// forbids (the three element kinds once the element cap is reached) get
// exactly 0.
std::vector<double> masked_probs(const ToyPolicy& policy, Slot slot,
                                 const std::vector<double>& features, int n_elements_done);

struct RolloutRecord {
    std::vector<PolicyToken> tokens; // sampled tokens, EOS last, no BOS
    std::vector<std::string> token_names;
    std::string code;
    raster::RasterImage image;
    double iou = 0;
    int bucket = 0;
    double reward = 0;
    std::vector<double> q;         // 1.0 until a critic fills it in
    std::vector<double> log_probs; // per sampled token
};

// Tokens -> elements at bucket centers -> canonical HTML. Throws
// DetokenizeFailure on a stream the grammar cannot have produced.
std::string detokenize(const GrammarConfig& grammar, const std::vector<PolicyToken>& tokens);

// Autoregressive masked sampling, then render at target size and score IoU
// against the target's foreground.
RolloutRecord sample_rollout(const ToyPolicy& policy, const raster::RasterImage& target,
                             rng::Xoshiro256& rng, const raster::RenderOptions& opts = {});

// -(1/k) sum of rollout IoUs.
double estimate_l_rl(const ToyPolicy& policy, const raster::RasterImage& target, int k_samples,
                     rng::Xoshiro256& rng, const raster::RenderOptions& opts = {});

// Loss on a frozen rollout: -reward * sum_t q_t * log p(token_t). The
// gradient below is its exact derivative; tests difference this function.
double rollout_scaled_nll(const ToyPolicy& policy, const RolloutRecord& rollout,
                          const std::vector<double>& features);

PolicyGradient policy_gradient(const ToyPolicy& policy, const RolloutRecord& rollout,
                               const std::vector<double>& features);

// Ground-truth sample -> token sequence (nearest bucket / nearest palette
// color). Throws GrammarMismatch when not expressible.
std::vector<PolicyToken> quantize_sample(const gen::RuidSample& sample, const GrammarConfig& grammar);

struct PolicyExample {
    std::string id;
    std::vector<double> features;
    std::vector<PolicyToken> tokens;
    raster::RasterImage image;
};

// Renders each sample and quantizes its elements; the supervised and RL
// stages both consume this form.
std::vector<PolicyExample> make_policy_dataset(const std::vector<gen::RuidSample>& samples,
                                               const GrammarConfig& grammar, int viewport_w,
                                               int viewport_h, const raster::RenderOptions& opts = {});

struct PretrainConfig {
    int epochs = 50;
    double lr = 0.5;

    void validate() const;
};

// Token-level cross-entropy on teacher-forced sequences, one SGD update per
// sample, fixed visit order. Returns per-epoch mean loss.
std::vector<double> pretrain(ToyPolicy& policy, const std::vector<PolicyExample>& dataset,
                             const PretrainConfig& config);

struct FinetuneConfig {
    int epochs = 50;
    double lr = 0.01; // eta
    int k_samples = 1;
    uint64_t seed = 0;
    bool constant_q = false;        // ablation: bypass the critic, q = 1
    bool baseline_subtraction = false; // subtract running mean reward
    double divergence_ratio = 0.5;
    int divergence_patience = 3;

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double mean_iou = 0;
    double mean_reward = 0;
    double mean_loss = 0;
};

// Critic-scaled REINFORCE over the dataset. Throws DivergenceDetected when
// the per-epoch mean IoU stays below divergence_ratio x the first epoch's
// value for divergence_patience consecutive epochs.
std::vector<EpochStats> finetune(ToyPolicy& policy, const critic::CriticModel& critic_model,
                                 const std::vector<PolicyExample>& dataset,
                                 const FinetuneConfig& config,
                                 const raster::RenderOptions& opts = {});

// Greedy (argmax) decode of one conditioning image.
std::vector<PolicyToken> greedy_decode(const ToyPolicy& policy, const std::vector<double>& features);

// Mean IoU of greedy decodes rendered against their targets.
double evaluate_policy(const ToyPolicy& policy, const std::vector<PolicyExample>& dataset,
                       const raster::RenderOptions& opts = {});

void save_policy(const ToyPolicy& policy, const std::string& path);
ToyPolicy load_policy(const std::string& path);

} // namespace ruid::rl
