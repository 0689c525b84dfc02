#include "ruid/critic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "ruid/errors.hpp"
#include "ruid/hash.hpp"
#include "ruid/html.hpp"
#include "ruid/rng.hpp"

using nlohmann::ordered_json;

namespace ruid::critic {

namespace {

constexpr int kWindow = 2; // unigram offsets -kWindow..+kWindow

struct PairFeature {
    int da, db;       // token offsets relative to t
    const char* salt; // keeps the four pair families in distinct hash roles
};

constexpr PairFeature kPairFeatures[] = {
    {-1, 0, "adj-"},
    {0, 1, "adj+"},
    {-2, 0, "skip-"},
    {0, 2, "skip+"},
};

int feature_dim(const CriticConfig& config, int vocab_size) {
    return 1 + (2 * kWindow + 1) * vocab_size + config.bigram_dim + config.position_buckets;
}

// Active feature indices of position t; all features are binary.
void active_features(const CriticModel& model, const std::vector<std::string>& tokens, size_t t,
                     std::vector<int>& out) {
    out.clear();
    out.push_back(0);
    const int v = static_cast<int>(model.vocab.size());
    const int n = static_cast<int>(tokens.size());
    const int ti = static_cast<int>(t);
    for (int o = -kWindow; o <= kWindow; ++o) {
        const int at = ti + o;
        if (at < 0 || at >= n) continue;
        const int id = model.token_id(tokens[static_cast<size_t>(at)]);
        out.push_back(1 + (o + kWindow) * v + id);
    }
    const int pair_base = 1 + (2 * kWindow + 1) * v;
    for (const auto& pf : kPairFeatures) {
        const int a = ti + pf.da, b = ti + pf.db;
        if (a < 0 || b >= n) continue;
        std::string key = pf.salt;
        key += tokens[static_cast<size_t>(a)];
        key += '\x1f';
        key += tokens[static_cast<size_t>(b)];
        out.push_back(pair_base + static_cast<int>(fnv1a64(key) % static_cast<uint64_t>(model.config.bigram_dim)));
    }
    const int pos_base = pair_base + model.config.bigram_dim;
    const int bucket = std::min(model.config.position_buckets - 1,
                                static_cast<int>(static_cast<size_t>(model.config.position_buckets) * t /
                                                 std::max<size_t>(tokens.size(), 1)));
    out.push_back(pos_base + bucket);
}

std::array<double, kNumBuckets> softmax(const std::array<double, kNumBuckets>& logits) {
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    std::array<double, kNumBuckets> p{};
    double sum = 0;
    for (int c = 0; c < kNumBuckets; ++c) {
        p[static_cast<size_t>(c)] = std::exp(logits[static_cast<size_t>(c)] - mx);
        sum += p[static_cast<size_t>(c)];
    }
    for (auto& x : p) x /= sum;
    return p;
}

std::array<double, kNumBuckets> logits_at(const CriticModel& model, const std::vector<std::string>& tokens,
                                          size_t t, std::vector<int>& scratch) {
    active_features(model, tokens, t, scratch);
    std::array<double, kNumBuckets> logits{};
    for (int c = 0; c < kNumBuckets; ++c)
        for (int f : scratch) logits[static_cast<size_t>(c)] += model.weights[static_cast<size_t>(c)][static_cast<size_t>(f)];
    return logits;
}

} // namespace

int bucketize_iou(double value) {
    if (!(value >= 0.0) || value > 1.0) throw OutOfRange("IoU outside [0,1]");
    for (int b = 0; b < kNumBuckets - 1; ++b)
        if (value < kBucketUpperBounds[static_cast<size_t>(b)]) return b;
    return kNumBuckets - 1;
}

double bucket_reward(int bucket) {
    if (bucket < 0 || bucket >= kNumBuckets) throw OutOfRange("bucket index outside 0..3");
    return kBucketRewards[static_cast<size_t>(bucket)];
}

std::pair<std::vector<std::string>, std::vector<uint8_t>> build_critic_input_tokens(
    const std::vector<std::string>& generated, const std::vector<std::string>& ground) {
    if (generated.empty() || ground.empty())
        throw EmptyInput("critic input needs non-empty generated and ground token streams");
    std::vector<std::string> tokens;
    tokens.reserve(generated.size() + 2 + ground.size());
    tokens.insert(tokens.end(), generated.begin(), generated.end());
    tokens.push_back("Ground");
    tokens.push_back(":");
    tokens.insert(tokens.end(), ground.begin(), ground.end());
    std::vector<uint8_t> mask(tokens.size(), 0);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(generated.size()), 1);
    return {std::move(tokens), std::move(mask)};
}

std::pair<std::vector<std::string>, std::vector<uint8_t>> build_critic_input(
    const std::string& generated, const std::string& ground) {
    return build_critic_input_tokens(html::tokenize_code(generated), html::tokenize_code(ground));
}

void CriticConfig::validate() const {
    if (epochs < 1) throw ConfigError("critic epochs must be >= 1");
    if (!(lr > 0)) throw ConfigError("critic lr must be positive");
    if (bigram_dim < 1) throw ConfigError("critic bigram_dim must be >= 1");
    if (position_buckets < 1) throw ConfigError("critic position_buckets must be >= 1");
}

int CriticModel::dim() const { return feature_dim(config, static_cast<int>(vocab.size())); }

int CriticModel::token_id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? 0 : it->second;
}

void CriticModel::rebuild_index() {
    index_.clear();
    // Slot 0 stays the OOV fallback; real tokens start at 1.
    for (size_t i = 1; i < vocab.size(); ++i) index_.emplace(vocab[i], static_cast<int>(i));
}

CriticModel CriticModel::zero(const CriticConfig& config, std::vector<std::string> vocab) {
    config.validate();
    CriticModel model;
    model.config = config;
    model.vocab = std::move(vocab);
    if (model.vocab.empty()) model.vocab.push_back("<unk>");
    model.weights.assign(kNumBuckets, std::vector<double>(static_cast<size_t>(model.dim()), 0.0));
    model.rebuild_index();
    return model;
}

std::vector<std::string> build_vocab(const std::vector<CriticExample>& examples) {
    std::vector<std::string> vocab{"<unk>"};
    std::unordered_map<std::string, int> seen{{"<unk>", 0}};
    for (const auto& ex : examples)
        for (const auto& tok : ex.tokens)
            if (seen.emplace(tok, static_cast<int>(vocab.size())).second) vocab.push_back(tok);
    return vocab;
}

CriticModel train_critic(const std::vector<CriticExample>& examples, const CriticConfig& config) {
    config.validate();
    std::set<int> buckets;
    for (const auto& ex : examples) {
        if (ex.label < 0 || ex.label >= kNumBuckets) throw OutOfRange("critic example label outside 0..3");
        if (ex.tokens.size() != ex.mask.size())
            throw LengthMismatch("critic example mask length differs from tokens");
        buckets.insert(ex.label);
    }
    if (examples.size() < 4 || buckets.size() < 2)
        throw DegenerateLabels("critic training needs >= 4 examples covering >= 2 buckets");

    CriticModel model = CriticModel::zero(config, build_vocab(examples));

    // Round-robin over buckets oversamples minority classes to balance.
    std::vector<std::vector<size_t>> by_bucket(kNumBuckets);
    for (size_t i = 0; i < examples.size(); ++i) by_bucket[static_cast<size_t>(examples[i].label)].push_back(i);
    std::vector<int> present(buckets.begin(), buckets.end());
    for (int b : present) {
        auto& ids = by_bucket[static_cast<size_t>(b)];
        auto rng = rng::Xoshiro256::stream(config.seed, static_cast<uint64_t>(b) + 1);
        for (size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.uniform_int(i)]);
    }

    std::vector<size_t> cursor(kNumBuckets, 0);
    std::vector<int> features;
    const size_t steps_per_epoch = examples.size();
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (size_t step = 0; step < steps_per_epoch; ++step) {
            const int b = present[step % present.size()];
            auto& ids = by_bucket[static_cast<size_t>(b)];
            const CriticExample& ex = examples[ids[cursor[static_cast<size_t>(b)] % ids.size()]];
            ++cursor[static_cast<size_t>(b)];

            size_t n_masked = 0;
            for (uint8_t m : ex.mask) n_masked += m != 0;
            if (n_masked == 0) continue;
            const double scale = config.lr / static_cast<double>(n_masked);
            for (size_t t = 0; t < ex.tokens.size(); ++t) {
                if (!ex.mask[t]) continue;
                const auto p = softmax(logits_at(model, ex.tokens, t, features));
                for (int c = 0; c < kNumBuckets; ++c) {
                    const double g = p[static_cast<size_t>(c)] - (c == ex.label ? 1.0 : 0.0);
                    if (g == 0) continue;
                    auto& row = model.weights[static_cast<size_t>(c)];
                    for (int f : features) row[static_cast<size_t>(f)] -= scale * g;
                }
            }
        }
    }
    return model;
}

std::vector<std::array<double, kNumBuckets>> token_logits(const CriticModel& model,
                                                          const std::vector<std::string>& tokens) {
    std::vector<std::array<double, kNumBuckets>> out(tokens.size());
    std::vector<int> features;
    for (size_t t = 0; t < tokens.size(); ++t) out[t] = logits_at(model, tokens, t, features);
    return out;
}

std::vector<double> per_token_q(const CriticModel& model, const std::vector<std::string>& tokens,
                                const std::vector<uint8_t>& mask, int gt_bucket) {
    if (tokens.size() != mask.size()) throw LengthMismatch("per_token_q: mask length differs from tokens");
    if (gt_bucket < 0 || gt_bucket >= kNumBuckets) throw OutOfRange("gt_bucket outside 0..3");
    std::vector<double> q(tokens.size(), 0.0);
    std::vector<int> features;
    for (size_t t = 0; t < tokens.size(); ++t) {
        if (!mask[t]) continue;
        q[t] = softmax(logits_at(model, tokens, t, features))[static_cast<size_t>(gt_bucket)];
    }
    return q;
}

std::vector<double> scale_vector(const std::vector<double>& q, double reward) {
    std::vector<double> out(q.size());
    for (size_t i = 0; i < q.size(); ++i) out[i] = reward * q[i];
    return out;
}

int predict_sequence(const CriticModel& model, const std::vector<std::string>& tokens,
                     const std::vector<uint8_t>& mask) {
    if (tokens.size() != mask.size())
        throw LengthMismatch("predict_sequence: mask length differs from tokens");
    std::array<double, kNumBuckets> sum{}; // argmax of the mean = argmax of the sum
    std::vector<int> features;
    for (size_t t = 0; t < tokens.size(); ++t) {
        if (!mask[t]) continue;
        const auto logits = logits_at(model, tokens, t, features);
        for (int c = 0; c < kNumBuckets; ++c) sum[static_cast<size_t>(c)] += logits[static_cast<size_t>(c)];
    }
    int best = 0;
    for (int c = 1; c < kNumBuckets; ++c)
        if (sum[static_cast<size_t>(c)] > sum[static_cast<size_t>(best)]) best = c;
    return best;
}

std::array<std::array<long long, kNumBuckets>, kNumBuckets> critic_confusion(
    const CriticModel& model, const std::vector<CriticExample>& held_out) {
    std::array<std::array<long long, kNumBuckets>, kNumBuckets> counts{};
    for (const auto& ex : held_out)
        ++counts[static_cast<size_t>(ex.label)][static_cast<size_t>(predict_sequence(model, ex.tokens, ex.mask))];
    return counts;
}

void save_critic(const CriticModel& model, const std::string& path) {
    ordered_json cfg{
        {"epochs", model.config.epochs},       {"lr", model.config.lr},
        {"bigram_dim", model.config.bigram_dim}, {"position_buckets", model.config.position_buckets},
        {"seed", model.config.seed},
    };
    ordered_json j{
        {"format_version", 1},
        {"tool_version", kToolVersion},
        {"config", cfg},
        {"config_hash", fnv1a64_hex(cfg.dump())},
        {"vocab", model.vocab},
        {"weights", model.weights},
    };
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << j.dump(2)) || !out.flush()) throw IoFailure("cannot write critic model: " + path);
}

CriticModel load_critic(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open critic model: " + path);
    CriticModel model;
    try {
        const auto j = ordered_json::parse(in);
        if (j.at("format_version").get<int>() != 1)
            throw IoFailure("critic model " + path + ": unsupported format version");
        const auto& cfg = j.at("config");
        model.config.epochs = cfg.at("epochs").get<int>();
        model.config.lr = cfg.at("lr").get<double>();
        model.config.bigram_dim = cfg.at("bigram_dim").get<int>();
        model.config.position_buckets = cfg.at("position_buckets").get<int>();
        model.config.seed = cfg.at("seed").get<uint64_t>();
        model.vocab = j.at("vocab").get<std::vector<std::string>>();
        model.weights = j.at("weights").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoFailure("critic model " + path + ": " + e.what());
    }
    if (model.weights.size() != kNumBuckets)
        throw IoFailure("critic model " + path + ": wrong weight row count");
    model.rebuild_index();
    for (const auto& row : model.weights)
        if (row.size() != static_cast<size_t>(model.dim()))
            throw IoFailure("critic model " + path + ": weight width mismatch");
    return model;
}

} // namespace ruid::critic
