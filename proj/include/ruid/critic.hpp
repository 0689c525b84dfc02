#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

// IoU bucketing, bucket rewards, and a per-token 4-way critic over windowed
// token features. The critic emits one 4-logit row per input token, so the
// downstream per-token softmax / bucket-selection / masking contracts hold
// exactly as they would for a transformer critic; this one trains in seconds
// and its gradient path is small enough to check by finite differences.

namespace ruid::critic {

// Right-open buckets over IoU: [0,0.23) [0.23,0.42) [0.42,0.77) [0.77,1].
inline constexpr std::array<double, 3> kBucketUpperBounds{0.23, 0.42, 0.77};
inline constexpr std::array<double, 4> kBucketRewards{-1.0, -0.7, -0.3, 1.0};
inline constexpr int kNumBuckets = 4;

int bucketize_iou(double value); // throws OutOfRange outside [0,1]

double bucket_reward(int bucket);

struct CriticExample {
    std::vector<std::string> tokens;
    std::vector<uint8_t> mask; // 1 on generated-code positions
    int label = 0;             // bucket index
};

// Tokens + mask for "{generated}\nGround:{ground}". Throws EmptyInput when
// either side has no tokens.
std::pair<std::vector<std::string>, std::vector<uint8_t>> build_critic_input(
    const std::string& generated, const std::string& ground);

// Same template over pre-tokenized streams (used by the RL loop, whose
// policy tokens never pass through a string form).
std::pair<std::vector<std::string>, std::vector<uint8_t>> build_critic_input_tokens(
    const std::vector<std::string>& generated, const std::vector<std::string>& ground);

struct CriticConfig {
    int epochs = 8;
    double lr = 0.15;
    int bigram_dim = 4096;     // hashed pair-feature slots
    int position_buckets = 8;
    uint64_t seed = 0;

    void validate() const; // throws ConfigError
};

// Linear per-token classifier. Features of position t: bias, exact unigrams
// at offsets -2..+2, hashed adjacent and skip-one token pairs, and a
// relative-position bucket. Zero weights give uniform softmax rows.
struct CriticModel {
    CriticConfig config;
    std::vector<std::string> vocab; // id -> token; id 0 is the OOV slot
    std::vector<std::vector<double>> weights; // [kNumBuckets][dim]

    int dim() const;
    int token_id(const std::string& token) const;
    void rebuild_index();

    static CriticModel zero(const CriticConfig& config, std::vector<std::string> vocab);

private:
    std::unordered_map<std::string, int> index_;
};

// First-seen token ids over the example corpus; id 0 reserved for OOV.
std::vector<std::string> build_vocab(const std::vector<CriticExample>& examples);

// Class-balanced SGD on masked-position cross-entropy against the sequence
// label. Deterministic given config.seed. Throws DegenerateLabels unless
// >= 4 examples cover >= 2 buckets.
CriticModel train_critic(const std::vector<CriticExample>& examples, const CriticConfig& config);

std::vector<std::array<double, kNumBuckets>> token_logits(const CriticModel& model,
                                                          const std::vector<std::string>& tokens);

// Per-position softmax probability of gt_bucket; zero off-mask.
std::vector<double> per_token_q(const CriticModel& model, const std::vector<std::string>& tokens,
                                const std::vector<uint8_t>& mask, int gt_bucket);

std::vector<double> scale_vector(const std::vector<double>& q, double reward);

// argmax of mean masked logits (ties to the lower bucket).
int predict_sequence(const CriticModel& model, const std::vector<std::string>& tokens,
                     const std::vector<uint8_t>& mask);

// rows = actual bucket, columns = predicted.
std::array<std::array<long long, kNumBuckets>, kNumBuckets> critic_confusion(
    const CriticModel& model, const std::vector<CriticExample>& held_out);

void save_critic(const CriticModel& model, const std::string& path);
CriticModel load_critic(const std::string& path);

} // namespace ruid::critic
