#include "ruid/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ruid/critic.hpp"
#include "ruid/errors.hpp"
#include "ruid/gen.hpp"
#include "ruid/hash.hpp"
#include "ruid/html.hpp"
#include "ruid/png_io.hpp"
#include "ruid/raster.hpp"
#include "ruid/rl.hpp"
#include "ruid/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace ruid::commands {
namespace {

std::string join_path(const std::string& base, const std::string& rel) {
    if (base.empty()) return rel;
    return (fs::path(base) / rel).string();
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return std::move(out).str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path);
    out << content;
    if (!out.good()) throw IoFailure("short write to " + path);
}

// Work items are independent and land in preassigned slots or distinct
// files, so the schedule never affects the output bytes.
void parallel_for(int jobs, size_t n, const std::function<void(size_t)>& body) {
    size_t workers = std::min(static_cast<size_t>(std::max(jobs, 1)), n);
    if (workers <= 1) {
        for (size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto run = [&] {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(n);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

raster::RenderOptions render_options(const config::RunConfig& cfg) {
    raster::RenderOptions opts;
    opts.text_mode = cfg.text_mode;
    return opts;
}

// Unparseable code renders as an empty page; it still scores, just badly.
raster::RasterImage render_code(const std::string& code, int width, int height,
                                const raster::RenderOptions& opts) {
    std::vector<html::RuidElement> elements;
    try {
        elements = html::extract_elements(html::parse_html(code));
    } catch (const IrrecoverableParse&) {
    }
    return raster::render(elements, width, height, opts);
}

void render_manifest(const config::RunConfig& cfg, const gen::DatasetManifest& manifest,
                     const std::string& base_dir) {
    std::set<std::string> parents;
    for (const auto& rec : manifest.records)
        parents.insert(fs::path(join_path(base_dir, rec.image_path)).parent_path().string());
    for (const auto& dir : parents)
        if (!dir.empty()) fs::create_directories(dir);

    const png_io::TextChunks chunks{{"config_hash", config::config_hash(cfg)},
                                    {"tool_version", kToolVersion}};
    const raster::RenderOptions opts = render_options(cfg);
    parallel_for(cfg.jobs, manifest.records.size(), [&](size_t i) {
        const auto& rec = manifest.records[i];
        auto code = read_text_file(join_path(base_dir, rec.code_path));
        auto image = render_code(code, cfg.viewport_w, cfg.viewport_h, opts);
        png_io::write_png_file(image, join_path(base_dir, rec.image_path), chunks);
    });
}

struct MetricField {
    const char* name;
    double metrics::SampleMetrics::* member;
};

constexpr MetricField kMetricFields[] = {
    {"bleu", &metrics::SampleMetrics::bleu},
    {"html_bleu", &metrics::SampleMetrics::html_bleu},
    {"bleu_component", &metrics::SampleMetrics::bleu_component},
    {"keyword_component", &metrics::SampleMetrics::keyword_component},
    {"dom_component", &metrics::SampleMetrics::dom_component},
    {"attr_component", &metrics::SampleMetrics::attr_component},
    {"iou", &metrics::SampleMetrics::iou},
    {"mse_rgb", &metrics::SampleMetrics::mse_rgb},
    {"mse_single_channel", &metrics::SampleMetrics::mse_single_channel},
    {"element_counts", &metrics::SampleMetrics::element_counts},
};

ordered_json sample_json(const metrics::SampleMetrics& m) {
    ordered_json j{{"id", m.id}};
    for (const auto& f : kMetricFields) j[f.name] = m.*f.member;
    return j;
}

void print_metric_table(const metrics::MetricReport& report) {
    std::printf("%-22s %10s %10s %6s\n", "metric", "mean", "sd", "n");
    for (const auto& f : kMetricFields) {
        std::vector<double> values;
        values.reserve(report.samples.size());
        for (const auto& s : report.samples) values.push_back(s.*f.member);
        auto agg = metrics::mean_sd(values);
        std::printf("%-22s %10.4f %10.4f %6d\n", f.name, agg.mean, agg.sd, agg.n);
    }
}

std::string csv_meta_line(const config::RunConfig& cfg) {
    return "# config_hash=" + config::config_hash(cfg) + " tool_version=" + kToolVersion + "\n";
}

std::vector<std::string> token_names_of(const std::vector<rl::PolicyToken>& tokens) {
    std::vector<std::string> names;
    names.reserve(tokens.size());
    for (const auto& t : tokens) names.push_back(rl::token_name(t));
    return names;
}

} // namespace

int cmd_generate(const config::RunConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    auto manifest = gen::generate_dataset(cfg.generator, out_dir);
    render_manifest(cfg, manifest, out_dir);

    int n_train = 0, n_val = 0, n_test = 0;
    for (const auto& rec : manifest.records) {
        if (rec.split == gen::Split::Train) ++n_train;
        else if (rec.split == gen::Split::Val) ++n_val;
        else ++n_test;
    }
    std::printf("generated %zu samples (%d train / %d val / %d test) under %s\n",
                manifest.records.size(), n_train, n_val, n_test, out_dir.c_str());
    return 0;
}

int cmd_render(const config::RunConfig& cfg, const std::string& manifest_path) {
    cfg.validate();
    auto manifest = gen::read_manifest(manifest_path);
    std::string base = fs::path(manifest_path).parent_path().string();
    render_manifest(cfg, manifest, base);
    std::printf("rendered %zu images at %dx%d\n", manifest.records.size(), cfg.viewport_w,
                cfg.viewport_h);
    return 0;
}

EvaluateResult evaluate_manifest(const config::RunConfig& cfg, const std::string& manifest_path,
                                 const std::string& predictions_dir) {
    cfg.validate();
    auto manifest = gen::read_manifest(manifest_path);
    std::string base = fs::path(manifest_path).parent_path().string();
    const raster::RenderOptions opts = render_options(cfg);

    const size_t n = manifest.records.size();
    EvaluateResult result;
    result.report.samples.resize(n);
    std::vector<uint8_t> missing(n, 0);

    parallel_for(cfg.jobs, n, [&](size_t i) {
        const auto& rec = manifest.records[i];
        std::string ground = read_text_file(join_path(base, rec.code_path));
        std::string pred;
        std::string pred_path = join_path(predictions_dir, rec.id + ".html");
        if (!predictions_dir.empty() && fs::exists(pred_path)) pred = read_text_file(pred_path);
        else missing[i] = 1;

        metrics::SampleMetrics& m = result.report.samples[i];
        m.id = rec.id;
        auto hb = metrics::html_bleu(pred, ground, cfg.metric_weights);
        m.bleu = hb.bleu;
        m.html_bleu = hb.total;
        m.bleu_component = hb.bleu;
        m.keyword_component = hb.keyword_bleu;
        m.dom_component = hb.dom;
        m.attr_component = hb.attr;
        m.element_counts = metrics::element_counts(pred, ground);

        raster::RasterImage ground_img;
        std::string image_path = join_path(base, rec.image_path);
        if (fs::exists(image_path)) ground_img = png_io::read_png_file(image_path);
        else ground_img = render_code(ground, cfg.viewport_w, cfg.viewport_h, opts);
        auto pred_img = render_code(pred, ground_img.width, ground_img.height, opts);
        m.iou = metrics::iou(raster::foreground_mask(pred_img), raster::foreground_mask(ground_img));
        m.mse_rgb = metrics::mse(pred_img, ground_img, metrics::MseMode::Rgb);
        m.mse_single_channel = metrics::mse(pred_img, ground_img, metrics::MseMode::SingleChannel);
    });

    for (uint8_t flag : missing) result.n_missing += flag;
    return result;
}

int cmd_evaluate(const config::RunConfig& cfg, const std::string& manifest_path,
                 const std::string& predictions_dir, const std::string& out_dir) {
    auto result = evaluate_manifest(cfg, manifest_path, predictions_dir);
    fs::create_directories(out_dir);

    std::ostringstream lines;
    ordered_json meta{{"config_hash", config::config_hash(cfg)},
                      {"tool_version", kToolVersion},
                      {"n_samples", static_cast<int>(result.report.samples.size())},
                      {"n_missing", result.n_missing}};
    lines << meta.dump() << '\n';
    for (const auto& m : result.report.samples) lines << sample_json(m).dump() << '\n';
    write_text_file(join_path(out_dir, "report.jsonl"), lines.str());

    ordered_json stats;
    for (const auto& f : kMetricFields) {
        std::vector<double> values;
        values.reserve(result.report.samples.size());
        for (const auto& s : result.report.samples) values.push_back(s.*f.member);
        auto agg = metrics::mean_sd(values);
        stats[f.name] = ordered_json{{"mean", agg.mean}, {"sd", agg.sd}, {"n", agg.n}};
    }
    ordered_json summary{{"config_hash", config::config_hash(cfg)},
                         {"tool_version", kToolVersion},
                         {"n_samples", static_cast<int>(result.report.samples.size())},
                         {"n_missing", result.n_missing},
                         {"metrics", stats}};
    write_text_file(join_path(out_dir, "summary.json"), summary.dump(2) + "\n");

    print_metric_table(result.report);
    if (result.n_missing > 0)
        std::printf("%d missing prediction(s) scored as empty documents\n", result.n_missing);
    return 0;
}

int cmd_train_critic(const config::RunConfig& cfg, const std::string& manifest_path,
                     const std::string& predictions_dir, const std::string& out_dir) {
    cfg.validate();
    auto manifest = gen::read_manifest(manifest_path);
    std::string base = fs::path(manifest_path).parent_path().string();
    const raster::RenderOptions opts = render_options(cfg);
    const size_t n_records = manifest.records.size();

    std::vector<std::string> ground_codes(n_records);
    std::vector<raster::PixelMask> ground_masks(n_records);
    parallel_for(cfg.jobs, n_records, [&](size_t i) {
        const auto& rec = manifest.records[i];
        ground_codes[i] = read_text_file(join_path(base, rec.code_path));
        std::string image_path = join_path(base, rec.image_path);
        raster::RasterImage img = fs::exists(image_path)
                                      ? png_io::read_png_file(image_path)
                                      : render_code(ground_codes[i], cfg.viewport_w,
                                                    cfg.viewport_h, opts);
        ground_masks[i] = raster::foreground_mask(img);
    });

    struct Pair {
        size_t record = 0;
        std::string pred;
    };
    std::vector<Pair> pairs;
    if (predictions_dir.empty()) {
        // No predictions given: pair each sample with seeded perturbations of
        // itself, strength 0 included so the top bucket is represented.
        const double strengths[] = {0.0, 0.3, 0.6, 1.0};
        for (size_t i = 0; i < n_records; ++i) {
            auto elements = html::extract_elements(html::parse_html(ground_codes[i]));
            gen::RuidSample sample{manifest.records[i].id, ground_codes[i], elements,
                                   gen::make_title(elements), gen::Split::Train};
            for (size_t j = 0; j < std::size(strengths); ++j) {
                auto rng = rng::Xoshiro256::stream(cfg.critic.seed, i * 8 + j + 1);
                pairs.push_back({i, metrics::perturb(sample, rng, strengths[j])});
            }
        }
    } else {
        int n_absent = 0;
        for (size_t i = 0; i < n_records; ++i) {
            std::string pred_path = join_path(predictions_dir, manifest.records[i].id + ".html");
            if (!fs::exists(pred_path)) {
                ++n_absent;
                continue;
            }
            pairs.push_back({i, read_text_file(pred_path)});
        }
        if (n_absent > 0) std::printf("skipped %d record(s) without a prediction file\n", n_absent);
    }

    std::vector<critic::CriticExample> slots(pairs.size());
    std::vector<uint8_t> keep(pairs.size(), 0);
    parallel_for(cfg.jobs, pairs.size(), [&](size_t i) {
        const auto& p = pairs[i];
        std::pair<std::vector<std::string>, std::vector<uint8_t>> input;
        try {
            input = critic::build_critic_input(p.pred, ground_codes[p.record]);
        } catch (const EmptyInput&) {
            return; // tokenless prediction, nothing for the critic to score
        }
        const auto& mask_ref = ground_masks[p.record];
        auto pred_img = render_code(p.pred, mask_ref.width, mask_ref.height, opts);
        double v = metrics::iou(raster::foreground_mask(pred_img), mask_ref);
        slots[i] = {std::move(input.first), std::move(input.second), critic::bucketize_iou(v)};
        keep[i] = 1;
    });

    std::vector<critic::CriticExample> examples;
    examples.reserve(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i)
        if (keep[i]) examples.push_back(std::move(slots[i]));

    auto shuffle_rng = rng::Xoshiro256::stream(cfg.critic.seed, 0x48454c44ull);
    for (size_t i = examples.size(); i > 1; --i)
        std::swap(examples[i - 1], examples[shuffle_rng.uniform_int(i)]);
    size_t n_held = examples.size() / 5;
    std::vector<critic::CriticExample> held(examples.begin(), examples.begin() + n_held);
    std::vector<critic::CriticExample> train(examples.begin() + n_held, examples.end());

    auto model = critic::train_critic(train, cfg.critic);
    fs::create_directories(out_dir);
    critic::save_critic(model, join_path(out_dir, "critic.json"));

    if (!held.empty()) {
        auto confusion = critic_confusion(model, held);
        std::ostringstream counts, normalized;
        counts << csv_meta_line(cfg) << "actual,pred_0,pred_1,pred_2,pred_3\n";
        normalized << csv_meta_line(cfg) << "actual,pred_0,pred_1,pred_2,pred_3\n";
        long long correct = 0, total = 0;
        char buf[160];
        for (int r = 0; r < critic::kNumBuckets; ++r) {
            long long row_total = 0;
            for (int c = 0; c < critic::kNumBuckets; ++c) row_total += confusion[r][c];
            std::snprintf(buf, sizeof buf, "%d,%lld,%lld,%lld,%lld\n", r, confusion[r][0],
                          confusion[r][1], confusion[r][2], confusion[r][3]);
            counts << buf;
            std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f\n", r,
                          row_total ? static_cast<double>(confusion[r][0]) / row_total : 0.0,
                          row_total ? static_cast<double>(confusion[r][1]) / row_total : 0.0,
                          row_total ? static_cast<double>(confusion[r][2]) / row_total : 0.0,
                          row_total ? static_cast<double>(confusion[r][3]) / row_total : 0.0);
            normalized << buf;
            correct += confusion[r][r];
            total += row_total;
        }
        write_text_file(join_path(out_dir, "confusion.csv"), counts.str());
        write_text_file(join_path(out_dir, "confusion_normalized.csv"), normalized.str());
        std::printf("critic: %zu train / %zu held-out examples, held-out accuracy %.4f\n",
                    train.size(), held.size(),
                    total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0);
    } else {
        std::printf("critic: %zu train examples, none held out\n", train.size());
    }
    return 0;
}

int cmd_rl_demo(const config::RunConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const config::DemoConfig& d = cfg.demo;
    fs::create_directories(out_dir);

    rl::GrammarConfig grammar;
    grammar.position_buckets = d.position_buckets;
    grammar.palette_colors = d.palette_colors;
    grammar.feature_grid = d.feature_grid;
    grammar.max_elements = d.max_elements;
    grammar.validate();

    gen::GenConfig gcfg = cfg.generator;
    gcfg.n_samples = d.n_train + d.n_eval;
    gcfg.seed = d.seed;
    gcfg.max_elements = d.max_elements;
    gcfg.min_elements = std::min(gcfg.min_elements, d.max_elements);
    gcfg.validate();
    auto words = gen::load_wordlist(gcfg.wordlist_path);
    auto samples = gen::generate_samples(gcfg, words);

    std::vector<gen::RuidSample> train_samples(samples.begin(), samples.begin() + d.n_train);
    std::vector<gen::RuidSample> eval_samples(samples.begin() + d.n_train, samples.end());

    // Geometry-only benchmark: text boxes would add foreground the grammar
    // cannot express, so the demo renders without them.
    raster::RenderOptions opts;
    opts.text_mode = raster::TextMode::None;

    auto train_ds = rl::make_policy_dataset(train_samples, grammar, d.viewport, d.viewport, opts);
    auto eval_ds = rl::make_policy_dataset(eval_samples, grammar, d.viewport, d.viewport, opts);

    auto policy = rl::ToyPolicy::zero(grammar);
    std::vector<double> pretrain_curve;
    if (d.pretrain_epochs > 0) {
        rl::PretrainConfig pcfg;
        pcfg.epochs = d.pretrain_epochs;
        pcfg.lr = d.pretrain_lr;
        pcfg.validate();
        pretrain_curve = rl::pretrain(policy, train_ds, pcfg);
    }
    rl::save_policy(policy, join_path(out_dir, "policy_pretrained.json"));
    double before = rl::evaluate_policy(policy, eval_ds, opts);

    // Critic corpus: rollouts from the pretrained policy, plus each image's
    // quantized ground sequence so the high buckets are populated.
    std::vector<critic::CriticExample> corpus;
    for (size_t i = 0; i < train_ds.size(); ++i) {
        const auto& ex = train_ds[i];
        auto ground_names = token_names_of(ex.tokens);
        std::string ground_code = rl::detokenize(grammar, ex.tokens);
        auto quantized = render_code(ground_code, ex.image.width, ex.image.height, opts);
        double v = metrics::iou(raster::foreground_mask(quantized),
                                raster::foreground_mask(ex.image));
        auto self_input = critic::build_critic_input_tokens(ground_names, ground_names);
        corpus.push_back({std::move(self_input.first), std::move(self_input.second),
                          critic::bucketize_iou(v)});
        uint64_t image_stream = rng::derive_stream(d.seed, 0xC0A0 + i);
        for (int r = 0; r < d.critic_rollouts_per_image; ++r) {
            auto rng = rng::Xoshiro256::stream(image_stream, r);
            auto rollout = rl::sample_rollout(policy, ex.image, rng, opts);
            auto input = critic::build_critic_input_tokens(rollout.token_names, ground_names);
            corpus.push_back({std::move(input.first), std::move(input.second), rollout.bucket});
        }
    }
    critic::CriticConfig ccfg = cfg.critic;
    ccfg.epochs = d.critic_epochs;
    ccfg.seed = d.seed;
    ccfg.validate();
    auto critic_model = critic::train_critic(corpus, ccfg);
    critic::save_critic(critic_model, join_path(out_dir, "critic.json"));

    rl::FinetuneConfig fcfg = cfg.finetune;
    fcfg.epochs = d.finetune_epochs;
    fcfg.lr = d.finetune_lr;
    fcfg.baseline_subtraction = d.baseline_subtraction;
    fcfg.seed = d.seed;
    fcfg.validate();
    auto curve = rl::finetune(policy, critic_model, train_ds, fcfg, opts);
    rl::save_policy(policy, join_path(out_dir, "policy_finetuned.json"));
    double after = rl::evaluate_policy(policy, eval_ds, opts);

    char buf[160];
    std::ostringstream curve_csv;
    curve_csv << csv_meta_line(cfg) << "epoch,mean_iou,mean_reward,mean_loss\n";
    for (const auto& row : curve) {
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f\n", row.epoch, row.mean_iou,
                      row.mean_reward, row.mean_loss);
        curve_csv << buf;
    }
    write_text_file(join_path(out_dir, "curve.csv"), curve_csv.str());

    std::ostringstream pre_csv;
    pre_csv << csv_meta_line(cfg) << "epoch,mean_loss\n";
    for (size_t e = 0; e < pretrain_curve.size(); ++e) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f\n", e + 1, pretrain_curve[e]);
        pre_csv << buf;
    }
    write_text_file(join_path(out_dir, "pretrain_loss.csv"), pre_csv.str());

    ordered_json summary{{"config_hash", config::config_hash(cfg)},
                         {"tool_version", kToolVersion},
                         {"n_train", d.n_train},
                         {"n_eval", d.n_eval},
                         {"before_iou", before},
                         {"after_iou", after},
                         {"delta_iou", after - before},
                         {"finetune_epochs", d.finetune_epochs},
                         {"final_train_iou", curve.empty() ? 0.0 : curve.back().mean_iou}};
    write_text_file(join_path(out_dir, "demo_summary.json"), summary.dump(2) + "\n");

    std::printf("%-10s %12s\n", "stage", "eval IoU");
    std::printf("%-10s %12.4f\n", "pretrained", before);
    std::printf("%-10s %12.4f\n", "finetuned", after);
    std::printf("%-10s %+12.4f\n", "delta", after - before);
    return 0;
}

int cmd_report(const config::RunConfig& cfg, const std::string& report_path,
               const std::string& manifest_path, const std::string& out_dir) {
    cfg.validate();
    metrics::MetricReport report;
    {
        std::ifstream in(report_path);
        if (!in) throw IoFailure("cannot open " + report_path);
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            ordered_json j;
            try {
                j = ordered_json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw IoFailure("bad report line in " + report_path + ": " + e.what());
            }
            bool meta = first && !j.contains("id");
            first = false;
            if (meta) continue;
            metrics::SampleMetrics m;
            m.id = j.value("id", std::string{});
            for (const auto& f : kMetricFields) m.*f.member = j.value(f.name, 0.0);
            report.samples.push_back(std::move(m));
        }
    }
    auto manifest = gen::read_manifest(manifest_path);
    auto rows = metrics::complexity_report(report, manifest);

    fs::create_directories(out_dir);
    std::ostringstream csv;
    csv << csv_meta_line(cfg) << "element_count,mean_iou,sd,n\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%d\n", r.element_count, r.mean_iou, r.sd, r.n);
        csv << buf;
    }
    write_text_file(join_path(out_dir, "complexity.csv"), csv.str());

    print_metric_table(report);
    std::printf("\n%-14s %10s %10s %6s\n", "element_count", "mean_iou", "sd", "n");
    for (const auto& r : rows)
        std::printf("%-14d %10.4f %10.4f %6d\n", r.element_count, r.mean_iou, r.sd, r.n);
    return 0;
}

} // namespace ruid::commands
