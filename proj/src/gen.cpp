#include "ruid/gen.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <utility>

#include "ruid/errors.hpp"
#include "ruid/hash.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace ruid::gen {

namespace {

// Substream index for the split shuffle, disjoint from per-sample indices.
constexpr uint64_t kSplitStream = 0x73706c6974ull << 20;

// Snaps a drawn value to what the canonical serializer prints, so parsing
// generated code reproduces the stored geometry exactly.
double quantize_pct(double v) {
    std::string s = html::format_pct(v);
    double out = 0;
    std::from_chars(s.data(), s.data() + s.size(), out);
    return out;
}

void check_range(const Range& r, const char* name) {
    if (!(r.lo <= r.hi) || r.lo < 0 || r.hi > 100)
        throw ConfigError(std::string(name) + " range must satisfy 0 <= lo <= hi <= 100");
}

std::string sample_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ruid-%06d", index);
    return buf;
}

html::DomNode element_node(const html::RuidElement& elem) {
    html::DomNode node;
    node.tag = elem.kind == html::ElementKind::Button ? "button" : "div";
    node.attributes.emplace_back("style", "");
    node.style.emplace_back("position", "absolute");
    if (elem.left_pct) node.style.emplace_back("left", html::format_pct(*elem.left_pct) + "%");
    if (elem.top_pct) node.style.emplace_back("top", html::format_pct(*elem.top_pct) + "%");
    if (elem.width_pct) node.style.emplace_back("width", html::format_pct(*elem.width_pct) + "%");
    if (elem.height_pct) node.style.emplace_back("height", html::format_pct(*elem.height_pct) + "%");

    if (elem.kind == html::ElementKind::Button) {
        node.text = elem.text;
        return node;
    }
    if (elem.background) node.style.emplace_back("background-color", to_hex(*elem.background));
    if (elem.kind == html::ElementKind::Ellipse) node.style.emplace_back("border-radius", "50%");

    html::DomNode p;
    p.tag = "p";
    p.attributes.emplace_back("style", "");
    p.style.emplace_back("margin", "0");
    p.style.emplace_back("position", "absolute");
    p.style.emplace_back("top", "50%");
    p.style.emplace_back("left", "50%");
    p.style.emplace_back("transform", "translate(-50%, -50%)");
    p.text = elem.text;
    node.children.push_back(std::move(p));
    return node;
}

void require_key_subset(const ordered_json& j, const std::set<std::string>& allowed, const char* where) {
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ConfigError(std::string("unknown key \"") + key + "\" in " + where);
}

Range range_from_json(const ordered_json& j, const char* name) {
    if (!j.is_array() || j.size() != 2)
        throw ConfigError(std::string(name) + " must be a [lo, hi] pair");
    return Range{j[0].get<double>(), j[1].get<double>()};
}

} // namespace

void GenConfig::validate() const {
    if (n_samples < 0) throw ConfigError("n_samples must be non-negative");
    if (min_elements < 1) throw ConfigError("min_elements must be at least 1");
    if (max_elements < min_elements) throw ConfigError("max_elements must be >= min_elements");
    check_range(left, "left");
    check_range(top, "top");
    check_range(width, "width");
    check_range(height, "height");
    if (weight_rectangle < 0 || weight_ellipse < 0 || weight_button < 0)
        throw ConfigError("occurrence weights must be non-negative");
    if (weight_rectangle + weight_ellipse + weight_button != 25)
        throw ConfigError("occurrence weights must sum to 25");
    if (split_train < 0 || split_val < 0 || split_test < 0)
        throw ConfigError("split ratios must be non-negative");
    if (std::abs(split_train + split_val + split_test - 1.0) > 1e-9)
        throw ConfigError("split ratios must sum to 1");
    if (wordlist_path.empty()) throw ConfigError("wordlist_path must be set");
}

const char* split_name(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "?";
}

std::vector<std::string> load_wordlist(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw EmptyWordlist("cannot open wordlist: " + path);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
            line.pop_back();
        if (!line.empty()) words.push_back(line);
    }
    if (words.empty()) throw EmptyWordlist("wordlist has no words: " + path);
    return words;
}

html::RuidElement generate_element(rng::Xoshiro256& rng, const GenConfig& config,
                                   const std::vector<std::string>& words) {
    if (words.empty()) throw EmptyWordlist("generate_element needs a non-empty wordlist");
    html::RuidElement elem;
    const uint64_t total =
        static_cast<uint64_t>(config.weight_rectangle + config.weight_ellipse + config.weight_button);
    const uint64_t pick = rng.uniform_int(total);
    if (pick < static_cast<uint64_t>(config.weight_rectangle))
        elem.kind = html::ElementKind::Rectangle;
    else if (pick < static_cast<uint64_t>(config.weight_rectangle + config.weight_ellipse))
        elem.kind = html::ElementKind::Ellipse;
    else
        elem.kind = html::ElementKind::Button;

    elem.left_pct = quantize_pct(rng.uniform(config.left.lo, config.left.hi));
    elem.top_pct = quantize_pct(rng.uniform(config.top.lo, config.top.hi));
    elem.width_pct = quantize_pct(rng.uniform(config.width.lo, config.width.hi));
    elem.height_pct = quantize_pct(rng.uniform(config.height.lo, config.height.hi));
    if (elem.kind != html::ElementKind::Button) {
        elem.background = Rgb{static_cast<uint8_t>(rng.uniform_int(256)),
                              static_cast<uint8_t>(rng.uniform_int(256)),
                              static_cast<uint8_t>(rng.uniform_int(256))};
    }
    elem.text = words[rng.uniform_int(words.size())];
    return elem;
}

std::string make_title(const std::vector<html::RuidElement>& elements) {
    int circles = 0, blocks = 0;
    for (const auto& e : elements) {
        if (e.kind == html::ElementKind::Ellipse) ++circles;
        if (e.kind == html::ElementKind::Rectangle) ++blocks;
    }
    return std::to_string(circles) + " Circles, " + std::to_string(blocks) + " Blocks";
}

std::string emit_code(const std::vector<html::RuidElement>& elements, const std::string& title) {
    html::DomTree tree;
    tree.has_doctype = true;
    tree.root.tag = "html";

    html::DomNode head;
    head.tag = "head";
    html::DomNode title_node;
    title_node.tag = "title";
    title_node.text = title;
    head.children.push_back(std::move(title_node));

    html::DomNode body;
    body.tag = "body";
    for (const auto& elem : elements) body.children.push_back(element_node(elem));

    tree.root.children.push_back(std::move(head));
    tree.root.children.push_back(std::move(body));
    return html::serialize_canonical(tree);
}

std::vector<RuidSample> generate_samples(const GenConfig& config, const std::vector<std::string>& words) {
    config.validate();
    if (words.empty()) throw EmptyWordlist("generate_samples needs a non-empty wordlist");

    const int n = config.n_samples;
    std::vector<RuidSample> samples(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto rng = rng::Xoshiro256::stream(config.seed, static_cast<uint64_t>(i));
        const int span = config.max_elements - config.min_elements + 1;
        const int count = config.min_elements + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(span)));
        RuidSample& s = samples[static_cast<size_t>(i)];
        s.id = sample_id(i);
        s.elements.reserve(static_cast<size_t>(count));
        for (int k = 0; k < count; ++k) s.elements.push_back(generate_element(rng, config, words));
        s.title = make_title(s.elements);
        s.code = emit_code(s.elements, s.title);
    }

    // Deterministic shuffle assigns splits; counts follow the ratios exactly
    // up to integer rounding.
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    auto shuffle_rng = rng::Xoshiro256::stream(config.seed, kSplitStream);
    for (int i = n - 1; i > 0; --i) {
        const auto j = shuffle_rng.uniform_int(static_cast<uint64_t>(i) + 1);
        std::swap(order[static_cast<size_t>(i)], order[j]);
    }
    const long long c_train = std::llround(config.split_train * n);
    const long long c_val = std::llround((config.split_train + config.split_val) * n);
    for (int pos = 0; pos < n; ++pos) {
        Split split = pos < c_train ? Split::Train : (pos < c_val ? Split::Val : Split::Test);
        samples[static_cast<size_t>(order[static_cast<size_t>(pos)])].split = split;
    }
    return samples;
}

ManifestRecord record_for(const RuidSample& sample) {
    ManifestRecord rec;
    rec.id = sample.id;
    rec.split = sample.split;
    rec.code_path = "code/" + sample.id + ".html";
    rec.image_path = "img/" + sample.id + ".png";
    for (const auto& e : sample.elements) {
        switch (e.kind) {
        case html::ElementKind::Rectangle: ++rec.n_rect; break;
        case html::ElementKind::Ellipse: ++rec.n_ellipse; break;
        case html::ElementKind::Button: ++rec.n_button; break;
        }
    }
    return rec;
}

DatasetManifest generate_dataset(const GenConfig& config, const std::string& out_dir) {
    const auto words = load_wordlist(config.wordlist_path);
    const auto samples = generate_samples(config, words);

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "code", ec);
    fs::create_directories(fs::path(out_dir) / "img", ec);

    DatasetManifest manifest;
    manifest.config = config;
    manifest.records.reserve(samples.size());
    for (const auto& s : samples) {
        ManifestRecord rec = record_for(s);
        const fs::path code_file = fs::path(out_dir) / rec.code_path;
        std::ofstream out(code_file, std::ios::binary);
        if (!out || !(out << s.code) || !out.flush())
            throw IoFailure("cannot write " + code_file.string());
        manifest.records.push_back(std::move(rec));
    }
    write_manifest(manifest, (fs::path(out_dir) / "manifest.jsonl").string());
    return manifest;
}

ordered_json to_json(const GenConfig& c) {
    return ordered_json{
        {"n_samples", c.n_samples},
        {"seed", c.seed},
        {"min_elements", c.min_elements},
        {"max_elements", c.max_elements},
        {"left", {c.left.lo, c.left.hi}},
        {"top", {c.top.lo, c.top.hi}},
        {"width", {c.width.lo, c.width.hi}},
        {"height", {c.height.lo, c.height.hi}},
        {"weights", {{"rectangle", c.weight_rectangle}, {"ellipse", c.weight_ellipse}, {"button", c.weight_button}}},
        {"split", {c.split_train, c.split_val, c.split_test}},
        {"wordlist_path", c.wordlist_path},
    };
}

GenConfig gen_config_from_json(const ordered_json& j) {
    if (!j.is_object()) throw ConfigError("generator config must be a JSON object");
    require_key_subset(j,
                       {"n_samples", "seed", "min_elements", "max_elements", "left", "top", "width",
                        "height", "weights", "split", "wordlist_path"},
                       "generator config");
    GenConfig c;
    try {
        if (j.contains("n_samples")) c.n_samples = j["n_samples"].get<int>();
        if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
        if (j.contains("min_elements")) c.min_elements = j["min_elements"].get<int>();
        if (j.contains("max_elements")) c.max_elements = j["max_elements"].get<int>();
        if (j.contains("left")) c.left = range_from_json(j["left"], "left");
        if (j.contains("top")) c.top = range_from_json(j["top"], "top");
        if (j.contains("width")) c.width = range_from_json(j["width"], "width");
        if (j.contains("height")) c.height = range_from_json(j["height"], "height");
        if (j.contains("weights")) {
            const auto& w = j["weights"];
            require_key_subset(w, {"rectangle", "ellipse", "button"}, "weights");
            if (w.contains("rectangle")) c.weight_rectangle = w["rectangle"].get<int>();
            if (w.contains("ellipse")) c.weight_ellipse = w["ellipse"].get<int>();
            if (w.contains("button")) c.weight_button = w["button"].get<int>();
        }
        if (j.contains("split")) {
            const auto& s = j["split"];
            if (!s.is_array() || s.size() != 3) throw ConfigError("split must be [train, val, test]");
            c.split_train = s[0].get<double>();
            c.split_val = s[1].get<double>();
            c.split_test = s[2].get<double>();
        }
        if (j.contains("wordlist_path")) c.wordlist_path = j["wordlist_path"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("generator config: ") + e.what());
    }
    return c;
}

std::string config_hash(const GenConfig& config) { return fnv1a64_hex(to_json(config).dump()); }

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot write manifest: " + path);
    ordered_json meta{
        {"config_hash", config_hash(manifest.config)},
        {"tool_version", kToolVersion},
        {"config", to_json(manifest.config)},
    };
    out << meta.dump() << "\n";
    for (const auto& r : manifest.records) {
        ordered_json rec{
            {"id", r.id},
            {"split", split_name(r.split)},
            {"code_path", r.code_path},
            {"image_path", r.image_path},
            {"n_rect", r.n_rect},
            {"n_ellipse", r.n_ellipse},
            {"n_button", r.n_button},
        };
        out << rec.dump() << "\n";
    }
    if (!out.flush()) throw IoFailure("cannot write manifest: " + path);
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open manifest: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoFailure("empty manifest: " + path);

    DatasetManifest manifest;
    try {
        const auto meta = ordered_json::parse(line);
        manifest.config = gen_config_from_json(meta.at("config"));
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = ordered_json::parse(line);
            ManifestRecord rec;
            rec.id = j.at("id").get<std::string>();
            const std::string split = j.at("split").get<std::string>();
            if (split == "train")
                rec.split = Split::Train;
            else if (split == "val")
                rec.split = Split::Val;
            else if (split == "test")
                rec.split = Split::Test;
            else
                throw IoFailure("manifest " + path + ": unknown split \"" + split + "\"");
            rec.code_path = j.at("code_path").get<std::string>();
            rec.image_path = j.at("image_path").get<std::string>();
            rec.n_rect = j.at("n_rect").get<int>();
            rec.n_ellipse = j.at("n_ellipse").get<int>();
            rec.n_button = j.at("n_button").get<int>();
            manifest.records.push_back(std::move(rec));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoFailure("manifest " + path + ": " + e.what());
    }
    return manifest;
}

} // namespace ruid::gen
