#include "ruid/rl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "ruid/errors.hpp"
#include "ruid/hash.hpp"
#include "ruid/html.hpp"
#include "ruid/metrics.hpp"

using nlohmann::ordered_json;

namespace ruid::rl {

namespace {

constexpr char kDetokenizedWord[] = "item";

// Tokens an element contributes at most (kind + 4 positions + color).
constexpr int kTokensPerElement = 6;

const char* slot_prefix(Slot slot) {
    switch (slot) {
    case Slot::Kind: return "";
    case Slot::Left: return "L";
    case Slot::Top: return "T";
    case Slot::Width: return "W";
    case Slot::Height: return "H";
    case Slot::Color: return "C";
    }
    return "?";
}

double slot_lo(Slot slot) {
    return (slot == Slot::Width || slot == Slot::Height) ? GrammarConfig::kSizeLo : GrammarConfig::kLeftLo;
}

double slot_span(Slot slot) {
    return (slot == Slot::Width || slot == Slot::Height) ? GrammarConfig::kSizeSpan
                                                         : GrammarConfig::kLeftSpan;
}

std::vector<double> softmax_rows(const std::vector<double>& logits, const std::vector<int>& feasible) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int r : feasible) mx = std::max(mx, logits[static_cast<size_t>(r)]);
    std::vector<double> probs(logits.size(), 0.0);
    double sum = 0;
    for (int r : feasible) {
        const double e = std::exp(logits[static_cast<size_t>(r)] - mx);
        probs[static_cast<size_t>(r)] = e;
        sum += e;
    }
    for (int r : feasible) probs[static_cast<size_t>(r)] /= sum;
    return probs;
}

std::vector<double> slot_logits(const ToyPolicy& policy, Slot slot, const std::vector<double>& features) {
    const auto& w = policy.weights[static_cast<size_t>(slot)];
    const size_t n_cols = static_cast<size_t>(policy.cols());
    if (features.size() + 1 != n_cols) throw LengthMismatch("feature vector does not fit the policy grid");
    std::vector<double> logits(w.size(), 0.0);
    for (size_t r = 0; r < w.size(); ++r) {
        double acc = w[r][n_cols - 1]; // bias column
        for (size_t c = 0; c + 1 < n_cols; ++c) acc += w[r][c] * features[c];
        logits[r] = acc;
    }
    return logits;
}

std::vector<int> feasible_rows(const GrammarConfig& grammar, Slot slot, int n_elements_done,
                               size_t tokens_so_far) {
    if (slot != Slot::Kind) {
        std::vector<int> all(static_cast<size_t>(
            slot == Slot::Color ? grammar.palette_colors : grammar.position_buckets));
        for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        return all;
    }
    // Element cap or length ceiling forces EOS.
    if (n_elements_done >= grammar.max_elements ||
        tokens_so_far + kTokensPerElement + 1 > static_cast<size_t>(grammar.max_len))
        return {kKindEos};
    return {kKindRect, kKindEllipse, kKindButton, kKindEos};
}

std::vector<std::string> token_names_of(const std::vector<PolicyToken>& tokens) {
    std::vector<std::string> names;
    names.reserve(tokens.size());
    for (const auto& t : tokens) names.push_back(token_name(t));
    return names;
}

html::RuidElement element_from_rows(const GrammarConfig& grammar, int kind_row, int left, int top,
                                    int width, int height, int color) {
    html::RuidElement elem;
    elem.kind = kind_row == kKindRect ? html::ElementKind::Rectangle
                : kind_row == kKindEllipse ? html::ElementKind::Ellipse
                                           : html::ElementKind::Button;
    elem.left_pct = position_center(grammar, Slot::Left, left);
    elem.top_pct = position_center(grammar, Slot::Top, top);
    elem.width_pct = position_center(grammar, Slot::Width, width);
    elem.height_pct = position_center(grammar, Slot::Height, height);
    if (elem.kind != html::ElementKind::Button) elem.background = palette_color(grammar, color);
    elem.text = kDetokenizedWord;
    return elem;
}

// Shared teacher-forced walk: calls visit(slot, feasible, probs, sampled_row,
// step_index) for every token in the sequence, maintaining grammar state.
template <typename Visit>
void replay_tokens(const ToyPolicy& policy, const std::vector<PolicyToken>& tokens,
                   const std::vector<double>& features, Visit&& visit) {
    int n_elements_done = 0;
    size_t step = 0;
    Slot expect = Slot::Kind;
    bool button = false;
    while (step < tokens.size()) {
        const PolicyToken& tok = tokens[step];
        if (tok.slot != expect) throw DetokenizeFailure("token stream leaves the grammar");
        const auto feasible = feasible_rows(policy.grammar, expect, n_elements_done, step);
        if (std::find(feasible.begin(), feasible.end(), tok.row) == feasible.end())
            throw DetokenizeFailure("token row infeasible at its step");
        const auto probs = softmax_rows(slot_logits(policy, expect, features), feasible);
        visit(expect, feasible, probs, tok.row, step);
        ++step;

        switch (expect) {
        case Slot::Kind:
            if (tok.row == kKindEos) return;
            button = tok.row == kKindButton;
            expect = Slot::Left;
            break;
        case Slot::Left: expect = Slot::Top; break;
        case Slot::Top: expect = Slot::Width; break;
        case Slot::Width: expect = Slot::Height; break;
        case Slot::Height:
            if (button) {
                ++n_elements_done;
                expect = Slot::Kind;
            } else {
                expect = Slot::Color;
            }
            break;
        case Slot::Color:
            ++n_elements_done;
            expect = Slot::Kind;
            break;
        }
    }
    throw DetokenizeFailure("token stream ended before EOS");
}

} // namespace

void GrammarConfig::validate() const {
    if (position_buckets < 1) throw ConfigError("position_buckets must be >= 1");
    if (palette_colors < 1) throw ConfigError("palette_colors must be >= 1");
    if (feature_grid < 1) throw ConfigError("feature_grid must be >= 1");
    if (max_elements < 1) throw ConfigError("max_elements must be >= 1");
    if (max_len < kTokensPerElement + 1)
        throw ConfigError("max_len cannot fit a single element plus EOS");
}

double position_center(const GrammarConfig& g, Slot slot, int bucket) {
    if (slot == Slot::Kind || slot == Slot::Color) throw OutOfRange("slot has no position buckets");
    if (bucket < 0 || bucket >= g.position_buckets) throw OutOfRange("position bucket outside range");
    const double step = slot_span(slot) / g.position_buckets;
    return slot_lo(slot) + (bucket + 0.5) * step;
}

Rgb palette_color(const GrammarConfig& g, int index) {
    if (index < 0 || index >= g.palette_colors) throw OutOfRange("palette index outside range");
    // Evenly spaced hues at full saturation, value 0.8 so no palette entry
    // collides with the white background.
    const double h = 360.0 * index / g.palette_colors / 60.0;
    const double v = 0.8, c = v; // s = 1
    const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
    double r = 0, gr = 0, b = 0;
    switch (static_cast<int>(h) % 6) {
    case 0: r = c, gr = x; break;
    case 1: r = x, gr = c; break;
    case 2: gr = c, b = x; break;
    case 3: gr = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
    }
    auto to_byte = [](double f) { return static_cast<uint8_t>(std::lround(f * 255.0)); };
    return Rgb{to_byte(r), to_byte(gr), to_byte(b)};
}

std::string token_name(const PolicyToken& token) {
    if (token.slot == Slot::Kind) {
        switch (token.row) {
        case kKindRect: return "RECT";
        case kKindEllipse: return "ELLIPSE";
        case kKindButton: return "BUTTON";
        default: return "EOS";
        }
    }
    return slot_prefix(token.slot) + std::to_string(token.row);
}

std::vector<double> image_features(const raster::RasterImage& image, int grid) {
    if (grid < 1) throw ConfigError("feature grid must be >= 1");
    std::vector<double> features(static_cast<size_t>(grid) * static_cast<size_t>(grid) * 3, 0.0);
    for (int gy = 0; gy < grid; ++gy) {
        const int y0 = static_cast<int>(static_cast<long long>(gy) * image.height / grid);
        const int y1 = static_cast<int>(static_cast<long long>(gy + 1) * image.height / grid);
        for (int gx = 0; gx < grid; ++gx) {
            const int x0 = static_cast<int>(static_cast<long long>(gx) * image.width / grid);
            const int x1 = static_cast<int>(static_cast<long long>(gx + 1) * image.width / grid);
            double sum[3] = {0, 0, 0};
            long long n = 0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    const Rgb px = image.get(x, y);
                    sum[0] += px.r;
                    sum[1] += px.g;
                    sum[2] += px.b;
                    ++n;
                }
            const size_t base = (static_cast<size_t>(gy) * static_cast<size_t>(grid) +
                                 static_cast<size_t>(gx)) * 3;
            for (int ch = 0; ch < 3; ++ch)
                features[base + static_cast<size_t>(ch)] = n ? sum[ch] / (255.0 * static_cast<double>(n)) : 0.0;
        }
    }
    return features;
}

int ToyPolicy::rows(Slot slot) const {
    switch (slot) {
    case Slot::Kind: return 4;
    case Slot::Color: return grammar.palette_colors;
    default: return grammar.position_buckets;
    }
}

int ToyPolicy::cols() const { return 3 * grammar.feature_grid * grammar.feature_grid + 1; }

size_t ToyPolicy::param_count() const {
    size_t n = 0;
    for (int s = 0; s < kNumSlots; ++s)
        n += static_cast<size_t>(rows(static_cast<Slot>(s))) * static_cast<size_t>(cols());
    return n;
}

double ToyPolicy::get_param(size_t index) const {
    for (int s = 0; s < kNumSlots; ++s) {
        const auto& w = weights[static_cast<size_t>(s)];
        const size_t block = w.size() * static_cast<size_t>(cols());
        if (index < block) return w[index / static_cast<size_t>(cols())][index % static_cast<size_t>(cols())];
        index -= block;
    }
    throw OutOfRange("parameter index outside policy");
}

void ToyPolicy::set_param(size_t index, double value) {
    for (int s = 0; s < kNumSlots; ++s) {
        auto& w = weights[static_cast<size_t>(s)];
        const size_t block = w.size() * static_cast<size_t>(cols());
        if (index < block) {
            w[index / static_cast<size_t>(cols())][index % static_cast<size_t>(cols())] = value;
            return;
        }
        index -= block;
    }
    throw OutOfRange("parameter index outside policy");
}

ToyPolicy ToyPolicy::zero(const GrammarConfig& grammar) {
    grammar.validate();
    ToyPolicy p;
    p.grammar = grammar;
    for (int s = 0; s < kNumSlots; ++s)
        p.weights[static_cast<size_t>(s)].assign(static_cast<size_t>(p.rows(static_cast<Slot>(s))),
                                                 std::vector<double>(static_cast<size_t>(p.cols()), 0.0));
    return p;
}

ToyPolicy ToyPolicy::random(const GrammarConfig& grammar, uint64_t seed, double scale) {
    ToyPolicy p = zero(grammar);
    auto rng = rng::Xoshiro256(seed);
    for (auto& slot : p.weights)
        for (auto& row : slot)
            for (auto& w : row) w = rng.uniform(-scale, scale);
    return p;
}

PolicyGradient zero_gradient(const ToyPolicy& policy) {
    PolicyGradient g;
    for (int s = 0; s < kNumSlots; ++s)
        g[static_cast<size_t>(s)].assign(policy.weights[static_cast<size_t>(s)].size(),
                                         std::vector<double>(static_cast<size_t>(policy.cols()), 0.0));
    return g;
}

void axpy_params(ToyPolicy& policy, const PolicyGradient& gradient, double alpha) {
    for (int s = 0; s < kNumSlots; ++s) {
        auto& w = policy.weights[static_cast<size_t>(s)];
        const auto& g = gradient[static_cast<size_t>(s)];
        for (size_t r = 0; r < w.size(); ++r)
            for (size_t c = 0; c < w[r].size(); ++c) w[r][c] += alpha * g[r][c];
    }
}

std::vector<double> masked_probs(const ToyPolicy& policy, Slot slot,
                                 const std::vector<double>& features, int n_elements_done) {
    const auto feasible = feasible_rows(policy.grammar, slot, n_elements_done, 0);
    return softmax_rows(slot_logits(policy, slot, features), feasible);
}

std::string detokenize(const GrammarConfig& grammar, const std::vector<PolicyToken>& tokens) {
    std::vector<html::RuidElement> elements;
    size_t i = 0;
    while (true) {
        if (i >= tokens.size()) throw DetokenizeFailure("token stream ended before EOS");
        const PolicyToken kind = tokens[i];
        if (kind.slot != Slot::Kind) throw DetokenizeFailure("expected a kind token");
        if (kind.row == kKindEos) {
            ++i;
            break;
        }
        const bool is_button = kind.row == kKindButton;
        const size_t need = is_button ? 4 : 5;
        if (i + need >= tokens.size()) throw DetokenizeFailure("element truncated before EOS");
        const Slot expected[5] = {Slot::Left, Slot::Top, Slot::Width, Slot::Height, Slot::Color};
        int rows[5] = {0, 0, 0, 0, 0};
        for (size_t k = 0; k < need; ++k) {
            const PolicyToken& t = tokens[i + 1 + k];
            if (t.slot != expected[k]) throw DetokenizeFailure("element fields out of order");
            rows[k] = t.row;
        }
        elements.push_back(element_from_rows(grammar, kind.row, rows[0], rows[1], rows[2], rows[3],
                                             is_button ? 0 : rows[4]));
        i += 1 + need;
    }
    if (i != tokens.size()) throw DetokenizeFailure("tokens continue past EOS");
    if (static_cast<int>(elements.size()) > grammar.max_elements)
        throw DetokenizeFailure("more elements than the grammar allows");
    return gen::emit_code(elements, gen::make_title(elements));
}

RolloutRecord sample_rollout(const ToyPolicy& policy, const raster::RasterImage& target,
                             rng::Xoshiro256& rng, const raster::RenderOptions& opts) {
    const auto features = image_features(target, policy.grammar.feature_grid);
    RolloutRecord out;
    int n_elements_done = 0;
    Slot slot = Slot::Kind;
    bool button = false;
    while (true) {
        const auto feasible = feasible_rows(policy.grammar, slot, n_elements_done, out.tokens.size());
        const auto probs = softmax_rows(slot_logits(policy, slot, features), feasible);
        int row = feasible.back();
        if (feasible.size() > 1) {
            const double u = rng.uniform();
            double acc = 0;
            for (int r : feasible) {
                acc += probs[static_cast<size_t>(r)];
                if (u < acc) {
                    row = r;
                    break;
                }
            }
        }
        out.tokens.push_back({slot, row});
        out.log_probs.push_back(std::log(probs[static_cast<size_t>(row)]));

        if (slot == Slot::Kind) {
            if (row == kKindEos) break;
            button = row == kKindButton;
            slot = Slot::Left;
        } else if (slot == Slot::Left) {
            slot = Slot::Top;
        } else if (slot == Slot::Top) {
            slot = Slot::Width;
        } else if (slot == Slot::Width) {
            slot = Slot::Height;
        } else if (slot == Slot::Height) {
            if (button) {
                ++n_elements_done;
                slot = Slot::Kind;
            } else {
                slot = Slot::Color;
            }
        } else {
            ++n_elements_done;
            slot = Slot::Kind;
        }
    }
    out.q.assign(out.tokens.size(), 1.0);
    out.token_names.reserve(out.tokens.size());
    for (const auto& t : out.tokens) out.token_names.push_back(token_name(t));

    out.code = detokenize(policy.grammar, out.tokens);
    const auto tree = html::parse_html(out.code);
    out.image = raster::render(html::extract_elements(tree), target.width, target.height, opts);
    out.iou = metrics::iou(raster::foreground_mask(out.image, opts.background),
                           raster::foreground_mask(target, opts.background));
    out.bucket = critic::bucketize_iou(out.iou);
    out.reward = critic::bucket_reward(out.bucket);
    return out;
}

double estimate_l_rl(const ToyPolicy& policy, const raster::RasterImage& target, int k_samples,
                     rng::Xoshiro256& rng, const raster::RenderOptions& opts) {
    if (k_samples < 1) throw ConfigError("k_samples must be >= 1");
    double sum = 0;
    for (int k = 0; k < k_samples; ++k) sum += sample_rollout(policy, target, rng, opts).iou;
    return -sum / k_samples;
}

double rollout_scaled_nll(const ToyPolicy& policy, const RolloutRecord& rollout,
                          const std::vector<double>& features) {
    double sum = 0;
    replay_tokens(policy, rollout.tokens, features,
                  [&](Slot, const std::vector<int>&, const std::vector<double>& probs, int row,
                      size_t step) { sum += rollout.q[step] * std::log(probs[static_cast<size_t>(row)]); });
    return -rollout.reward * sum;
}

PolicyGradient policy_gradient(const ToyPolicy& policy, const RolloutRecord& rollout,
                               const std::vector<double>& features) {
    if (rollout.q.size() != rollout.tokens.size())
        throw LengthMismatch("rollout q length differs from tokens");
    PolicyGradient grad = zero_gradient(policy);
    const size_t n_cols = static_cast<size_t>(policy.cols());
    replay_tokens(policy, rollout.tokens, features,
                  [&](Slot slot, const std::vector<int>& feasible, const std::vector<double>& probs,
                      int row, size_t step) {
                      const double coef = -rollout.reward * rollout.q[step];
                      if (coef == 0) return;
                      auto& g = grad[static_cast<size_t>(slot)];
                      for (int r : feasible) {
                          const double d = (r == row ? 1.0 : 0.0) - probs[static_cast<size_t>(r)];
                          if (d == 0) continue;
                          auto& row_grad = g[static_cast<size_t>(r)];
                          for (size_t c = 0; c + 1 < n_cols; ++c) row_grad[c] += coef * d * features[c];
                          row_grad[n_cols - 1] += coef * d;
                      }
                  });
    return grad;
}

std::vector<PolicyToken> quantize_sample(const gen::RuidSample& sample, const GrammarConfig& grammar) {
    grammar.validate();
    if (static_cast<int>(sample.elements.size()) > grammar.max_elements)
        throw GrammarMismatch("sample has more elements than the grammar allows");
    constexpr double kEps = 1e-9;
    std::vector<PolicyToken> tokens;
    auto bucket_of = [&](Slot slot, std::optional<double> value) {
        if (!value) throw GrammarMismatch("element is missing a geometry field");
        const double lo = slot_lo(slot), span = slot_span(slot);
        if (*value < lo - kEps || *value > lo + span + kEps)
            throw GrammarMismatch("geometry outside the grammar's bucket range");
        const double step = span / grammar.position_buckets;
        const int idx = static_cast<int>(std::floor((*value - lo) / step));
        return std::clamp(idx, 0, grammar.position_buckets - 1);
    };
    for (const auto& e : sample.elements) {
        int kind_row = kKindRect;
        if (e.kind == html::ElementKind::Ellipse) kind_row = kKindEllipse;
        if (e.kind == html::ElementKind::Button) kind_row = kKindButton;
        tokens.push_back({Slot::Kind, kind_row});
        tokens.push_back({Slot::Left, bucket_of(Slot::Left, e.left_pct)});
        tokens.push_back({Slot::Top, bucket_of(Slot::Top, e.top_pct)});
        tokens.push_back({Slot::Width, bucket_of(Slot::Width, e.width_pct)});
        tokens.push_back({Slot::Height, bucket_of(Slot::Height, e.height_pct)});
        if (e.kind != html::ElementKind::Button) {
            if (!e.background) throw GrammarMismatch("element is missing its color");
            int best = 0;
            long long best_d = -1;
            for (int ci = 0; ci < grammar.palette_colors; ++ci) {
                const Rgb p = palette_color(grammar, ci);
                const long long dr = static_cast<long long>(p.r) - e.background->r;
                const long long dg = static_cast<long long>(p.g) - e.background->g;
                const long long db = static_cast<long long>(p.b) - e.background->b;
                const long long d = dr * dr + dg * dg + db * db;
                if (best_d < 0 || d < best_d) {
                    best_d = d;
                    best = ci;
                }
            }
            tokens.push_back({Slot::Color, best});
        }
    }
    tokens.push_back({Slot::Kind, kKindEos});
    if (tokens.size() > static_cast<size_t>(grammar.max_len))
        throw GrammarMismatch("quantized sequence exceeds max_len");
    return tokens;
}

std::vector<PolicyExample> make_policy_dataset(const std::vector<gen::RuidSample>& samples,
                                               const GrammarConfig& grammar, int viewport_w,
                                               int viewport_h, const raster::RenderOptions& opts) {
    std::vector<PolicyExample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        PolicyExample ex;
        ex.id = s.id;
        ex.tokens = quantize_sample(s, grammar);
        ex.image = raster::render(s.elements, viewport_w, viewport_h, opts);
        ex.features = image_features(ex.image, grammar.feature_grid);
        out.push_back(std::move(ex));
    }
    return out;
}

void PretrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("pretrain epochs must be >= 1");
    if (!(lr > 0)) throw ConfigError("pretrain lr must be positive");
}

std::vector<double> pretrain(ToyPolicy& policy, const std::vector<PolicyExample>& dataset,
                             const PretrainConfig& config) {
    config.validate();
    if (dataset.empty()) throw EmptyInput("pretrain needs a non-empty dataset");
    std::vector<double> curve;
    curve.reserve(static_cast<size_t>(config.epochs));
    const size_t n_cols = static_cast<size_t>(policy.cols());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double loss_sum = 0;
        size_t token_count = 0;
        for (const auto& ex : dataset) {
            PolicyGradient grad = zero_gradient(policy);
            double sample_loss = 0;
            size_t sample_tokens = 0;
            replay_tokens(policy, ex.tokens, ex.features,
                          [&](Slot slot, const std::vector<int>& feasible,
                              const std::vector<double>& probs, int row, size_t) {
                              sample_loss -= std::log(probs[static_cast<size_t>(row)]);
                              ++sample_tokens;
                              auto& g = grad[static_cast<size_t>(slot)];
                              for (int r : feasible) {
                                  const double d = probs[static_cast<size_t>(r)] - (r == row ? 1.0 : 0.0);
                                  if (d == 0) continue;
                                  auto& row_grad = g[static_cast<size_t>(r)];
                                  for (size_t c = 0; c + 1 < n_cols; ++c)
                                      row_grad[c] += d * ex.features[c];
                                  row_grad[n_cols - 1] += d;
                              }
                          });
            if (sample_tokens == 0) continue;
            axpy_params(policy, grad, -config.lr / static_cast<double>(sample_tokens));
            loss_sum += sample_loss;
            token_count += sample_tokens;
        }
        curve.push_back(token_count ? loss_sum / static_cast<double>(token_count) : 0.0);
    }
    return curve;
}

void FinetuneConfig::validate() const {
    if (epochs < 1) throw ConfigError("finetune epochs must be >= 1");
    if (lr < 0) throw ConfigError("finetune lr must be non-negative");
    if (k_samples < 1) throw ConfigError("finetune k_samples must be >= 1");
    if (!(divergence_ratio > 0) || divergence_ratio >= 1)
        throw ConfigError("divergence_ratio must lie in (0,1)");
    if (divergence_patience < 1) throw ConfigError("divergence_patience must be >= 1");
}

std::vector<EpochStats> finetune(ToyPolicy& policy, const critic::CriticModel& critic_model,
                                 const std::vector<PolicyExample>& dataset,
                                 const FinetuneConfig& config, const raster::RenderOptions& opts) {
    config.validate();
    if (dataset.empty()) throw EmptyInput("finetune needs a non-empty dataset");

    std::vector<EpochStats> curve;
    double first_epoch_iou = 0;
    int low_epochs = 0;
    double reward_baseline = 0;
    long long reward_count = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double iou_sum = 0, reward_sum = 0, loss_sum = 0;
        long long n_rollouts = 0;
        for (size_t i = 0; i < dataset.size(); ++i) {
            const auto& ex = dataset[i];
            PolicyGradient grad = zero_gradient(policy);
            for (int k = 0; k < config.k_samples; ++k) {
                auto rng = rng::Xoshiro256::stream(
                    config.seed, (static_cast<uint64_t>(epoch) * dataset.size() + i) *
                                         static_cast<uint64_t>(config.k_samples) +
                                     static_cast<uint64_t>(k));
                RolloutRecord rollout = sample_rollout(policy, ex.image, rng, opts);
                if (!config.constant_q) {
                    auto [tokens, mask] =
                        critic::build_critic_input_tokens(rollout.token_names, token_names_of(ex.tokens));
                    const auto q_full = critic::per_token_q(critic_model, tokens, mask, rollout.bucket);
                    std::copy(q_full.begin(),
                              q_full.begin() + static_cast<std::ptrdiff_t>(rollout.tokens.size()),
                              rollout.q.begin());
                }
                if (config.baseline_subtraction) {
                    ++reward_count;
                    reward_baseline += (rollout.reward - reward_baseline) / static_cast<double>(reward_count);
                    rollout.reward -= reward_baseline;
                }
                const PolicyGradient g = policy_gradient(policy, rollout, ex.features);
                for (int s = 0; s < kNumSlots; ++s)
                    for (size_t r = 0; r < g[static_cast<size_t>(s)].size(); ++r)
                        for (size_t c = 0; c < g[static_cast<size_t>(s)][r].size(); ++c)
                            grad[static_cast<size_t>(s)][r][c] +=
                                g[static_cast<size_t>(s)][r][c] / config.k_samples;
                iou_sum += rollout.iou;
                reward_sum += rollout.reward;
                loss_sum += rollout_scaled_nll(policy, rollout, ex.features);
                ++n_rollouts;
            }
            axpy_params(policy, grad, -config.lr);
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_iou = iou_sum / static_cast<double>(n_rollouts);
        stats.mean_reward = reward_sum / static_cast<double>(n_rollouts);
        stats.mean_loss = loss_sum / static_cast<double>(n_rollouts);
        curve.push_back(stats);

        if (epoch == 0) {
            first_epoch_iou = stats.mean_iou;
        } else if (stats.mean_iou < config.divergence_ratio * first_epoch_iou) {
            if (++low_epochs >= config.divergence_patience)
                throw DivergenceDetected("mean IoU stayed below " +
                                         std::to_string(config.divergence_ratio) +
                                         " of its starting value");
        } else {
            low_epochs = 0;
        }
    }
    return curve;
}

std::vector<PolicyToken> greedy_decode(const ToyPolicy& policy, const std::vector<double>& features) {
    std::vector<PolicyToken> tokens;
    int n_elements_done = 0;
    Slot slot = Slot::Kind;
    bool button = false;
    while (true) {
        const auto feasible = feasible_rows(policy.grammar, slot, n_elements_done, tokens.size());
        const auto probs = softmax_rows(slot_logits(policy, slot, features), feasible);
        int row = feasible[0];
        for (int r : feasible)
            if (probs[static_cast<size_t>(r)] > probs[static_cast<size_t>(row)]) row = r;
        tokens.push_back({slot, row});
        if (slot == Slot::Kind) {
            if (row == kKindEos) break;
            button = row == kKindButton;
            slot = Slot::Left;
        } else if (slot == Slot::Left) {
            slot = Slot::Top;
        } else if (slot == Slot::Top) {
            slot = Slot::Width;
        } else if (slot == Slot::Width) {
            slot = Slot::Height;
        } else if (slot == Slot::Height) {
            if (button) {
                ++n_elements_done;
                slot = Slot::Kind;
            } else {
                slot = Slot::Color;
            }
        } else {
            ++n_elements_done;
            slot = Slot::Kind;
        }
    }
    return tokens;
}

double evaluate_policy(const ToyPolicy& policy, const std::vector<PolicyExample>& dataset,
                       const raster::RenderOptions& opts) {
    if (dataset.empty()) throw EmptyInput("evaluate_policy needs a non-empty dataset");
    double sum = 0;
    for (const auto& ex : dataset) {
        const auto tokens = greedy_decode(policy, ex.features);
        const std::string code = detokenize(policy.grammar, tokens);
        const auto tree = html::parse_html(code);
        const auto image =
            raster::render(html::extract_elements(tree), ex.image.width, ex.image.height, opts);
        sum += metrics::iou(raster::foreground_mask(image, opts.background),
                            raster::foreground_mask(ex.image, opts.background));
    }
    return sum / static_cast<double>(dataset.size());
}

void save_policy(const ToyPolicy& policy, const std::string& path) {
    ordered_json grammar{
        {"position_buckets", policy.grammar.position_buckets},
        {"palette_colors", policy.grammar.palette_colors},
        {"feature_grid", policy.grammar.feature_grid},
        {"max_elements", policy.grammar.max_elements},
        {"max_len", policy.grammar.max_len},
    };
    ordered_json slots = ordered_json::array();
    for (const auto& slot : policy.weights) slots.push_back(slot);
    ordered_json j{
        {"format_version", 1},
        {"tool_version", kToolVersion},
        {"grammar", grammar},
        {"config_hash", fnv1a64_hex(grammar.dump())},
        {"weights", slots},
    };
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << j.dump(2)) || !out.flush()) throw IoFailure("cannot write policy: " + path);
}

ToyPolicy load_policy(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open policy: " + path);
    try {
        const auto j = ordered_json::parse(in);
        if (j.at("format_version").get<int>() != 1)
            throw IoFailure("policy " + path + ": unsupported format version");
        GrammarConfig grammar;
        const auto& g = j.at("grammar");
        grammar.position_buckets = g.at("position_buckets").get<int>();
        grammar.palette_colors = g.at("palette_colors").get<int>();
        grammar.feature_grid = g.at("feature_grid").get<int>();
        grammar.max_elements = g.at("max_elements").get<int>();
        grammar.max_len = g.at("max_len").get<int>();
        ToyPolicy policy = ToyPolicy::zero(grammar);
        const auto& slots = j.at("weights");
        if (slots.size() != static_cast<size_t>(kNumSlots))
            throw IoFailure("policy " + path + ": wrong slot count");
        for (int s = 0; s < kNumSlots; ++s) {
            auto loaded = slots[static_cast<size_t>(s)].get<std::vector<std::vector<double>>>();
            auto& w = policy.weights[static_cast<size_t>(s)];
            if (loaded.size() != w.size()) throw IoFailure("policy " + path + ": wrong row count");
            for (size_t r = 0; r < w.size(); ++r) {
                if (loaded[r].size() != w[r].size())
                    throw IoFailure("policy " + path + ": wrong column count");
                w[r] = std::move(loaded[r]);
            }
        }
        return policy;
    } catch (const nlohmann::json::exception& e) {
        throw IoFailure("policy " + path + ": " + e.what());
    }
}

} // namespace ruid::rl
