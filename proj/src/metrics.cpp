#include "ruid/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "ruid/errors.hpp"

namespace ruid::metrics {

namespace {

using Counts = std::unordered_map<std::string, long long>;

std::string gram_key(const std::vector<std::string>& tokens, size_t at, int n) {
    std::string key;
    for (int k = 0; k < n; ++k) {
        if (k) key += '\x1f';
        key += tokens[at + static_cast<size_t>(k)];
    }
    return key;
}

Counts ngram_counts(const std::vector<std::string>& tokens, int n) {
    Counts out;
    if (tokens.size() < static_cast<size_t>(n)) return out;
    for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) ++out[gram_key(tokens, i, n)];
    return out;
}

// Shared precision-combining scheme: add-one smoothing for zero counts at
// n >= 2, hard zero when unigrams never match.
std::optional<double> order_log_precision(int n, double matched, double total) {
    if (n == 1) {
        if (matched <= 0) return std::nullopt;
        return std::log(matched / total);
    }
    if (total <= 0 || matched <= 0) return std::log((matched + 1.0) / (total + 1.0));
    return std::log(matched / total);
}

double brevity_penalty(size_t candidate_len, size_t reference_len) {
    if (candidate_len >= reference_len) return 1.0;
    return std::exp(1.0 - static_cast<double>(reference_len) / static_cast<double>(candidate_len));
}

std::string subtree_signature(const html::DomNode& node, std::vector<std::string>& all) {
    std::string sig = node.tag + "(";
    bool first = true;
    for (const auto& child : node.children) {
        if (!first) sig += ',';
        first = false;
        sig += subtree_signature(child, all);
    }
    sig += ')';
    all.push_back(sig);
    return sig;
}

// Flattened (attribute, value) + (style property, value) pair set of one
// node; the raw style attribute itself is represented by its declarations.
void collect_attr_sets(const html::DomNode& node, std::vector<std::set<std::string>>& out) {
    std::set<std::string> pairs;
    for (const auto& [k, v] : node.attributes)
        if (k != "style") pairs.insert(k + "=" + v);
    for (const auto& [p, v] : node.style) pairs.insert(p + ":" + v);
    if (!pairs.empty()) out.push_back(std::move(pairs));
    for (const auto& child : node.children) collect_attr_sets(child, out);
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 1.0;
    size_t inter = 0;
    for (const auto& x : a) inter += b.count(x);
    const size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::array<int, 3> kind_multiset(const std::string& code) {
    std::array<int, 3> counts{0, 0, 0};
    try {
        const auto tree = html::parse_html(code);
        for (const auto& e : html::extract_elements(tree)) ++counts[static_cast<size_t>(e.kind)];
    } catch (const IrrecoverableParse&) {
    }
    return counts;
}

std::vector<double> fractional_ranks(const std::vector<double>& values) {
    const size_t n = values.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double clamp_pct(double v, double lo, double hi) { return std::clamp(v, lo, hi); }

} // namespace

void HtmlBleuWeights::validate() const {
    if (w_bleu < 0 || w_keyword < 0 || w_dom < 0 || w_attr < 0)
        throw ConfigError("htmlBLEU weights must be non-negative");
    if (std::abs(w_bleu + w_keyword + w_dom + w_attr - 1.0) > 1e-9)
        throw ConfigError("htmlBLEU weights must sum to 1");
    if (keyword_boost < 1.0) throw ConfigError("keyword_boost must be >= 1");
}

const std::vector<std::string>& html_keywords() {
    static const std::vector<std::string> keywords = {
        "div",   "p",        "button", "html",  "head",   "body",
        "title", "style",    "position", "left", "top",    "width",
        "height", "background-color", "border-radius", "margin", "transform",
    };
    return keywords;
}

double bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
            int max_n) {
    if (reference.empty()) throw EmptyReference("bleu: empty reference");
    if (candidate.empty()) return 0.0;
    double log_sum = 0;
    for (int n = 1; n <= max_n; ++n) {
        const auto cand = ngram_counts(candidate, n);
        const auto ref = ngram_counts(reference, n);
        long long matched = 0, total = 0;
        for (const auto& [g, c] : cand) {
            total += c;
            auto it = ref.find(g);
            if (it != ref.end()) matched += std::min(c, it->second);
        }
        const auto lp = order_log_precision(n, static_cast<double>(matched), static_cast<double>(total));
        if (!lp) return 0.0;
        log_sum += *lp;
    }
    return brevity_penalty(candidate.size(), reference.size()) * std::exp(log_sum / max_n);
}

double weighted_keyword_bleu(const std::vector<std::string>& candidate,
                             const std::vector<std::string>& reference,
                             const std::vector<std::string>& keywords, double boost) {
    if (reference.empty()) throw EmptyReference("weighted_keyword_bleu: empty reference");
    if (candidate.empty()) return 0.0;
    const std::unordered_set<std::string> kw(keywords.begin(), keywords.end());
    auto gram_weight = [&](const std::vector<std::string>& tokens, size_t at, int n) {
        for (int k = 0; k < n; ++k)
            if (kw.count(tokens[at + static_cast<size_t>(k)])) return boost;
        return 1.0;
    };

    constexpr int kMaxN = 4;
    double log_sum = 0;
    for (int n = 1; n <= kMaxN; ++n) {
        const auto ref = ngram_counts(reference, n);
        Counts cand;
        std::unordered_map<std::string, double> weight;
        if (candidate.size() >= static_cast<size_t>(n)) {
            for (size_t i = 0; i + static_cast<size_t>(n) <= candidate.size(); ++i) {
                std::string key = gram_key(candidate, i, n);
                weight.emplace(key, gram_weight(candidate, i, n));
                ++cand[key];
            }
        }
        double weighted_matched = 0, weighted_total = 0;
        long long raw_total = 0;
        for (const auto& [g, c] : cand) {
            const double w = weight[g];
            raw_total += c;
            weighted_total += w * static_cast<double>(c);
            auto it = ref.find(g);
            if (it != ref.end()) weighted_matched += w * static_cast<double>(std::min(c, it->second));
        }
        // Renormalize so the order's mass equals the raw n-gram count and the
        // add-one smoothing acts on the same scale as plain BLEU.
        const double scale = weighted_total > 0 ? static_cast<double>(raw_total) / weighted_total : 1.0;
        const auto lp = order_log_precision(n, weighted_matched * scale, static_cast<double>(raw_total));
        if (!lp) return 0.0;
        log_sum += *lp;
    }
    return brevity_penalty(candidate.size(), reference.size()) * std::exp(log_sum / kMaxN);
}

double dom_tree_match(const html::DomTree& candidate, const html::DomTree& reference) {
    if (candidate.root.tag.empty() || reference.root.tag.empty()) return 0.0;
    std::vector<std::string> cand_sigs, ref_sigs;
    subtree_signature(candidate.root, cand_sigs);
    subtree_signature(reference.root, ref_sigs);
    std::unordered_map<std::string, int> pool;
    for (const auto& s : ref_sigs) ++pool[s];
    long long matched = 0;
    for (const auto& s : cand_sigs) {
        auto it = pool.find(s);
        if (it != pool.end() && it->second > 0) {
            --it->second;
            ++matched;
        }
    }
    return cand_sigs.empty() ? 0.0 : static_cast<double>(matched) / static_cast<double>(cand_sigs.size());
}

double attribute_match(const html::DomTree& candidate, const html::DomTree& reference) {
    std::vector<std::set<std::string>> cand_sets, ref_sets;
    if (!candidate.root.tag.empty()) collect_attr_sets(candidate.root, cand_sets);
    if (!reference.root.tag.empty()) collect_attr_sets(reference.root, ref_sets);
    if (ref_sets.empty()) return cand_sets.empty() ? 1.0 : 0.0;
    if (cand_sets.empty()) return 0.0;

    struct Pair {
        double j;
        size_t ci, ri;
    };
    std::vector<Pair> pairs;
    pairs.reserve(cand_sets.size() * ref_sets.size());
    for (size_t ci = 0; ci < cand_sets.size(); ++ci)
        for (size_t ri = 0; ri < ref_sets.size(); ++ri) {
            const double j = jaccard(cand_sets[ci], ref_sets[ri]);
            if (j > 0) pairs.push_back({j, ci, ri});
        }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.j != b.j) return a.j > b.j;
        if (a.ci != b.ci) return a.ci < b.ci;
        return a.ri < b.ri;
    });
    std::vector<bool> cand_used(cand_sets.size()), ref_used(ref_sets.size());
    double sum = 0;
    for (const auto& p : pairs) {
        if (cand_used[p.ci] || ref_used[p.ri]) continue;
        cand_used[p.ci] = ref_used[p.ri] = true;
        sum += p.j;
    }
    return sum / static_cast<double>(ref_sets.size());
}

HtmlBleuResult html_bleu(const std::string& candidate, const std::string& reference,
                         const HtmlBleuWeights& weights) {
    weights.validate();
    const auto cand_tokens = html::tokenize_code(candidate);
    const auto ref_tokens = html::tokenize_code(reference);

    HtmlBleuResult r;
    r.bleu = bleu(cand_tokens, ref_tokens);
    r.keyword_bleu = weighted_keyword_bleu(cand_tokens, ref_tokens, html_keywords(), weights.keyword_boost);

    html::DomTree cand_tree, ref_tree;
    bool cand_ok = true, ref_ok = true;
    try {
        cand_tree = html::parse_html(candidate);
    } catch (const IrrecoverableParse&) {
        cand_ok = false;
    }
    try {
        ref_tree = html::parse_html(reference);
    } catch (const IrrecoverableParse&) {
        ref_ok = false;
    }
    if (cand_ok && ref_ok) {
        r.dom = dom_tree_match(cand_tree, ref_tree);
        r.attr = attribute_match(cand_tree, ref_tree);
    }
    r.total = weights.w_bleu * r.bleu + weights.w_keyword * r.keyword_bleu + weights.w_dom * r.dom +
              weights.w_attr * r.attr;
    return r;
}

double iou(const raster::PixelMask& a, const raster::PixelMask& b) {
    if (a.width != b.width || a.height != b.height)
        throw DimensionMismatch("iou: mask dimensions differ");
    long long inter = 0, uni = 0;
    for (size_t i = 0; i < a.bits.size(); ++i) {
        const bool av = a.bits[i] != 0, bv = b.bits[i] != 0;
        inter += av && bv;
        uni += av || bv;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double mse(const raster::RasterImage& a, const raster::RasterImage& b, MseMode mode) {
    if (a.width != b.width || a.height != b.height)
        throw DimensionMismatch("mse: image dimensions differ");
    const size_t n_pixels = static_cast<size_t>(a.width) * static_cast<size_t>(a.height);
    if (n_pixels == 0) return 0.0;
    double sum = 0;
    if (mode == MseMode::Rgb) {
        for (size_t i = 0; i < a.pixels.size(); ++i) {
            const double d = (static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i])) / 255.0;
            sum += d * d;
        }
        return sum / static_cast<double>(n_pixels * 3) * 100.0;
    }
    for (size_t i = 0; i < n_pixels; ++i) {
        const size_t at = i * 3;
        auto luma = [&](const raster::RasterImage& img) {
            return (0.299 * img.pixels[at] + 0.587 * img.pixels[at + 1] + 0.114 * img.pixels[at + 2]) / 255.0;
        };
        const double d = luma(a) - luma(b);
        sum += d * d;
    }
    return sum / static_cast<double>(n_pixels);
}

double element_counts(const std::string& candidate, const std::string& reference) {
    return kind_multiset(candidate) == kind_multiset(reference) ? 1.0 : 0.0;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw LengthMismatch("spearman: need two equal-length lists of size >= 2");
    const auto rx = fractional_ranks(xs);
    const auto ry = fractional_ranks(ys);
    const size_t n = xs.size();
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0 || syy == 0) throw DegenerateInput("spearman: constant input");
    return sxy / std::sqrt(sxx * syy);
}

Aggregate mean_sd(const std::vector<double>& values) {
    Aggregate agg;
    agg.n = static_cast<int>(values.size());
    if (values.empty()) return agg;
    double sum = 0;
    for (double v : values) sum += v;
    agg.mean = sum / static_cast<double>(values.size());
    if (values.size() < 2) return agg;
    double ss = 0;
    for (double v : values) ss += (v - agg.mean) * (v - agg.mean);
    agg.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return agg;
}

std::vector<ComplexityRow> complexity_report(const MetricReport& report,
                                             const gen::DatasetManifest& manifest) {
    std::unordered_map<std::string, int> count_by_id;
    for (const auto& r : manifest.records) count_by_id[r.id] = r.n_rect + r.n_ellipse + r.n_button;

    std::map<int, std::vector<double>> groups;
    for (const auto& s : report.samples) {
        auto it = count_by_id.find(s.id);
        if (it == count_by_id.end()) continue;
        groups[it->second].push_back(s.iou);
    }
    std::vector<ComplexityRow> rows;
    rows.reserve(groups.size());
    for (const auto& [count, ious] : groups) {
        const auto agg = mean_sd(ious);
        rows.push_back({count, agg.mean, agg.sd, agg.n});
    }
    return rows;
}

void apply_element_edit(std::vector<html::RuidElement>& elements, EditKind kind,
                        rng::Xoshiro256& rng, double strength) {
    if (kind == EditKind::CorruptToken) return;
    if (elements.empty()) return;
    const size_t i = rng.uniform_int(elements.size());
    html::RuidElement& e = elements[i];
    switch (kind) {
    case EditKind::Move: {
        const double d = 5.0 + 15.0 * strength;
        e.left_pct = clamp_pct(e.left_pct.value_or(0) + rng.uniform(-d, d), 0, 95);
        e.top_pct = clamp_pct(e.top_pct.value_or(0) + rng.uniform(-d, d), 0, 95);
        break;
    }
    case EditKind::Resize: {
        const double fw = rng.uniform(0.5, 1.5);
        const double fh = rng.uniform(0.5, 1.5);
        e.width_pct = clamp_pct(e.width_pct.value_or(10) * fw, 2, 80);
        e.height_pct = clamp_pct(e.height_pct.value_or(10) * fh, 2, 80);
        break;
    }
    case EditKind::Recolor:
        if (e.kind != html::ElementKind::Button)
            e.background = Rgb{static_cast<uint8_t>(rng.uniform_int(256)),
                               static_cast<uint8_t>(rng.uniform_int(256)),
                               static_cast<uint8_t>(rng.uniform_int(256))};
        break;
    case EditKind::Delete:
        elements.erase(elements.begin() + static_cast<std::ptrdiff_t>(i));
        break;
    case EditKind::Duplicate:
        elements.push_back(elements[i]);
        break;
    case EditKind::CorruptToken:
        break;
    }
}

std::string corrupt_token(std::string code, rng::Xoshiro256& rng) {
    std::vector<size_t> word_positions;
    for (size_t i = 0; i < code.size(); ++i) {
        const char c = code[i];
        if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'))
            word_positions.push_back(i);
    }
    if (word_positions.empty()) return code;
    const size_t at = word_positions[rng.uniform_int(word_positions.size())];
    code[at] = static_cast<char>('a' + rng.uniform_int(26));
    return code;
}

std::string perturb(const gen::RuidSample& sample, rng::Xoshiro256& rng, double strength) {
    const int k = static_cast<int>(std::llround(strength * 6.0));
    if (k <= 0) return sample.code;
    auto elements = sample.elements;
    int corruptions = 0;
    for (int step = 0; step < k; ++step) {
        const auto kind = static_cast<EditKind>(rng.uniform_int(6));
        if (kind == EditKind::CorruptToken)
            ++corruptions;
        else
            apply_element_edit(elements, kind, rng, strength);
    }
    std::string code = gen::emit_code(elements, sample.title);
    for (int c = 0; c < corruptions; ++c) code = corrupt_token(std::move(code), rng);
    return code;
}

} // namespace ruid::metrics
