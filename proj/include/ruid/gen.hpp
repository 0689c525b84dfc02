#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ruid/html.hpp"
#include "ruid/rng.hpp"

// Seeded synthetic generation of (code, metadata) samples: element taxonomy,
// geometry ranges and kind weights follow the dataset recipe, splits are
// assigned by a deterministic shuffle, and the whole generator is a pure
// function of (config, seed).

namespace ruid::gen {

struct Range {
    double lo = 0;
    double hi = 0;
};

struct GenConfig {
    int n_samples = 25000;
    uint64_t seed = 0;
    int min_elements = 1;
    int max_elements = 6;
    Range left{0, 80};
    Range top{0, 80};
    Range width{10, 30};
    Range height{10, 30};
    // Kind weights out of 25: Rectangle 12, Ellipse 12, Button 1.
    int weight_rectangle = 12;
    int weight_ellipse = 12;
    int weight_button = 1;
    double split_train = 0.8;
    double split_val = 0.1;
    double split_test = 0.1;
    std::string wordlist_path = "data/wordlist.txt";

    void validate() const; // throws ConfigError on violated invariants
};

enum class Split { Train, Val, Test };

const char* split_name(Split s);

struct RuidSample {
    std::string id;
    std::string code;
    std::vector<html::RuidElement> elements;
    std::string title;
    Split split = Split::Train;
};

struct ManifestRecord {
    std::string id;
    Split split = Split::Train;
    std::string code_path;
    std::string image_path;
    int n_rect = 0;
    int n_ellipse = 0;
    int n_button = 0;
};

struct DatasetManifest {
    GenConfig config;
    std::vector<ManifestRecord> records;
};

// One word per line; throws EmptyWordlist when unreadable or empty.
std::vector<std::string> load_wordlist(const std::string& path);

// Draw order is fixed: kind, left, top, width, height, color, word.
html::RuidElement generate_element(rng::Xoshiro256& rng, const GenConfig& config,
                                   const std::vector<std::string>& words);

// "{n_ellipses} Circles, {n_rectangles} Blocks"; buttons are not counted.
std::string make_title(const std::vector<html::RuidElement>& elements);

// Full document: skeleton with the title in head and one canonical
// div/button per element inside body.
std::string emit_code(const std::vector<html::RuidElement>& elements, const std::string& title);

// In-memory generation (no I/O). Sample i draws from substream (seed, i), so
// the set is reproducible and parallelizable.
std::vector<RuidSample> generate_samples(const GenConfig& config, const std::vector<std::string>& words);

// generate_samples plus persistence: writes code files under out_dir/code/
// and manifest.jsonl; image paths point at out_dir/img/ for the raster stage.
DatasetManifest generate_dataset(const GenConfig& config, const std::string& out_dir);

ManifestRecord record_for(const RuidSample& sample);

nlohmann::ordered_json to_json(const GenConfig& config);
GenConfig gen_config_from_json(const nlohmann::ordered_json& j); // throws ConfigError on unknown keys

// FNV-1a of the canonical config JSON; stamped into the manifest and the
// rendered images so a dataset can be traced back to its settings.
std::string config_hash(const GenConfig& config);

// manifest.jsonl: a meta line {"config_hash", "tool_version", "config"}
// followed by one record per sample.
void write_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

} // namespace ruid::gen
