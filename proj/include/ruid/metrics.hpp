#pragma once

#include <string>
#include <vector>

#include "ruid/gen.hpp"
#include "ruid/html.hpp"
#include "ruid/raster.hpp"
#include "ruid/rng.hpp"

// Text and visual similarity metrics: BLEU, keyword-weighted BLEU, DOM tree
// matching, attribute matching, their htmlBLEU combination, IoU, MSE,
// element-count agreement, rank correlation, and the perturbation machinery
// used to validate the metrics against each other.

namespace ruid::metrics {

struct HtmlBleuWeights {
    double w_bleu = 0.25;
    double w_keyword = 0.25;
    double w_dom = 0.25;
    double w_attr = 0.25;
    double keyword_boost = 4.0;

    void validate() const; // throws ConfigError unless weights sum to 1 and boost >= 1
};

struct HtmlBleuResult {
    double total = 0;
    double bleu = 0;
    double keyword_bleu = 0;
    double dom = 0;
    double attr = 0;
};

// Style property and tag names whose n-grams get boosted in the weighted
// BLEU component.
const std::vector<std::string>& html_keywords();

// Modified n-gram precision BLEU (orders 1..max_n, brevity penalty, add-one
// smoothing on zero counts for n >= 2). Throws EmptyReference.
double bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
            int max_n = 4);

// BLEU where each n-gram counts `boost`-fold when it contains a keyword;
// per-order weights are renormalized so the smoothing scale is unchanged.
double weighted_keyword_bleu(const std::vector<std::string>& candidate,
                             const std::vector<std::string>& reference,
                             const std::vector<std::string>& keywords, double boost);

// Fraction of candidate subtrees (node = tag + recursive child tags,
// attributes ignored) present in the reference subtree multiset.
double dom_tree_match(const html::DomTree& candidate, const html::DomTree& reference);

// Elements (nodes with at least one attribute or style pair) matched
// greedily by Jaccard similarity of their flattened pair sets; mean Jaccard
// over reference elements.
double attribute_match(const html::DomTree& candidate, const html::DomTree& reference);

// Weighted sum of the four components. Unparseable candidate zeroes the two
// tree components; the BLEU components always run on raw token streams.
HtmlBleuResult html_bleu(const std::string& candidate, const std::string& reference,
                         const HtmlBleuWeights& weights = {});

// |a AND b| / |a OR b|; 1.0 when both masks are empty. Throws DimensionMismatch.
double iou(const raster::PixelMask& a, const raster::PixelMask& b);

enum class MseMode { Rgb, SingleChannel };

// Channels on [0,1]. Rgb: mean squared difference over pixels x channels,
// x100. SingleChannel: same on luma (0.299R + 0.587G + 0.114B), unscaled.
double mse(const raster::RasterImage& a, const raster::RasterImage& b, MseMode mode);

// 1 iff the extracted element-kind multisets agree (geometry ignored).
double element_counts(const std::string& candidate, const std::string& reference);

// Pearson correlation of fractional ranks, ties averaged. Throws
// LengthMismatch, DegenerateInput on constant input.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct Aggregate {
    double mean = 0;
    double sd = 0; // sample standard deviation, 0 when n < 2
    int n = 0;
};

Aggregate mean_sd(const std::vector<double>& values);

struct SampleMetrics {
    std::string id;
    double bleu = 0;
    double html_bleu = 0;
    double bleu_component = 0;
    double keyword_component = 0;
    double dom_component = 0;
    double attr_component = 0;
    double iou = 0;
    double mse_rgb = 0;
    double mse_single_channel = 0;
    double element_counts = 0;
};

struct MetricReport {
    std::vector<SampleMetrics> samples;
};

struct ComplexityRow {
    int element_count = 0;
    double mean_iou = 0;
    double sd = 0;
    int n = 0;
};

// IoU grouped by ground-truth element count, joined on sample id.
std::vector<ComplexityRow> complexity_report(const MetricReport& report,
                                             const gen::DatasetManifest& manifest);

enum class EditKind { Move, Resize, Recolor, Delete, Duplicate, CorruptToken };

// One structural edit in place. CorruptToken is a string-level edit and is a
// no-op here.
void apply_element_edit(std::vector<html::RuidElement>& elements, EditKind kind,
                        rng::Xoshiro256& rng, double strength);

// Replaces one word character with a random letter.
std::string corrupt_token(std::string code, rng::Xoshiro256& rng);

// round(strength*6) random edits; strength 0 returns the code unchanged.
// The result is a plain string and may no longer be valid HTML.
std::string perturb(const gen::RuidSample& sample, rng::Xoshiro256& rng, double strength);

} // namespace ruid::metrics
