#include "ruid/config.hpp"

#include <fstream>
#include <set>

#include "ruid/errors.hpp"
#include "ruid/hash.hpp"

using nlohmann::ordered_json;

namespace ruid::config {

namespace {

void require_key_subset(const ordered_json& j, const std::set<std::string>& allowed, const char* where) {
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ConfigError(std::string("unknown key \"") + key + "\" in " + where);
}

template <typename T>
void read_field(const ordered_json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j[key].get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad value for \"") + key + "\": " + e.what());
    }
}

ordered_json demo_to_json(const DemoConfig& d) {
    return ordered_json{
        {"n_train", d.n_train},
        {"n_eval", d.n_eval},
        {"viewport", d.viewport},
        {"position_buckets", d.position_buckets},
        {"palette_colors", d.palette_colors},
        {"feature_grid", d.feature_grid},
        {"max_elements", d.max_elements},
        {"pretrain_epochs", d.pretrain_epochs},
        {"pretrain_lr", d.pretrain_lr},
        {"critic_epochs", d.critic_epochs},
        {"critic_rollouts_per_image", d.critic_rollouts_per_image},
        {"finetune_epochs", d.finetune_epochs},
        {"finetune_lr", d.finetune_lr},
        {"baseline_subtraction", d.baseline_subtraction},
        {"seed", d.seed},
    };
}

DemoConfig demo_from_json(const ordered_json& j) {
    require_key_subset(j,
                       {"n_train", "n_eval", "viewport", "position_buckets", "palette_colors",
                        "feature_grid", "max_elements", "pretrain_epochs", "pretrain_lr",
                        "critic_epochs", "critic_rollouts_per_image", "finetune_epochs",
                        "finetune_lr", "baseline_subtraction", "seed"},
                       "demo config");
    DemoConfig d;
    read_field(j, "n_train", d.n_train);
    read_field(j, "n_eval", d.n_eval);
    read_field(j, "viewport", d.viewport);
    read_field(j, "position_buckets", d.position_buckets);
    read_field(j, "palette_colors", d.palette_colors);
    read_field(j, "feature_grid", d.feature_grid);
    read_field(j, "max_elements", d.max_elements);
    read_field(j, "pretrain_epochs", d.pretrain_epochs);
    read_field(j, "pretrain_lr", d.pretrain_lr);
    read_field(j, "critic_epochs", d.critic_epochs);
    read_field(j, "critic_rollouts_per_image", d.critic_rollouts_per_image);
    read_field(j, "finetune_epochs", d.finetune_epochs);
    read_field(j, "finetune_lr", d.finetune_lr);
    read_field(j, "baseline_subtraction", d.baseline_subtraction);
    read_field(j, "seed", d.seed);
    return d;
}

} // namespace

void DemoConfig::validate() const {
    if (n_train < 1 || n_eval < 1) throw ConfigError("demo sample counts must be >= 1");
    if (viewport < 16) throw ConfigError("demo viewport must be >= 16");
    if (pretrain_epochs < 0) throw ConfigError("demo pretrain_epochs must be >= 0");
    if (!(pretrain_lr > 0)) throw ConfigError("demo pretrain_lr must be positive");
    if (critic_epochs < 1) throw ConfigError("demo critic_epochs must be >= 1");
    if (critic_rollouts_per_image < 1) throw ConfigError("demo critic_rollouts_per_image must be >= 1");
    if (finetune_epochs < 1) throw ConfigError("demo finetune_epochs must be >= 1");
    if (finetune_lr < 0) throw ConfigError("demo finetune_lr must be non-negative");
    rl::GrammarConfig g;
    g.position_buckets = position_buckets;
    g.palette_colors = palette_colors;
    g.feature_grid = feature_grid;
    g.max_elements = max_elements;
    g.validate();
}

void RunConfig::validate() const {
    generator.validate();
    metric_weights.validate();
    critic.validate();
    grammar.validate();
    pretrain.validate();
    finetune.validate();
    demo.validate();
    if (viewport_w < 16 || viewport_h < 16) throw ConfigError("viewport must be at least 16x16");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

ordered_json to_json(const RunConfig& c) {
    return ordered_json{
        {"generator", gen::to_json(c.generator)},
        {"metrics",
         {{"w_bleu", c.metric_weights.w_bleu},
          {"w_keyword", c.metric_weights.w_keyword},
          {"w_dom", c.metric_weights.w_dom},
          {"w_attr", c.metric_weights.w_attr},
          {"keyword_boost", c.metric_weights.keyword_boost}}},
        {"critic",
         {{"epochs", c.critic.epochs},
          {"lr", c.critic.lr},
          {"bigram_dim", c.critic.bigram_dim},
          {"position_buckets", c.critic.position_buckets},
          {"seed", c.critic.seed}}},
        {"rl",
         {{"grammar",
           {{"position_buckets", c.grammar.position_buckets},
            {"palette_colors", c.grammar.palette_colors},
            {"feature_grid", c.grammar.feature_grid},
            {"max_elements", c.grammar.max_elements},
            {"max_len", c.grammar.max_len}}},
          {"pretrain", {{"epochs", c.pretrain.epochs}, {"lr", c.pretrain.lr}}},
          {"finetune",
           {{"epochs", c.finetune.epochs},
            {"lr", c.finetune.lr},
            {"k_samples", c.finetune.k_samples},
            {"seed", c.finetune.seed},
            {"constant_q", c.finetune.constant_q},
            {"baseline_subtraction", c.finetune.baseline_subtraction},
            {"divergence_ratio", c.finetune.divergence_ratio},
            {"divergence_patience", c.finetune.divergence_patience}}}}},
        {"demo", demo_to_json(c.demo)},
        {"render",
         {{"viewport", {c.viewport_w, c.viewport_h}},
          {"text_mode", c.text_mode == raster::TextMode::Box ? "box" : "none"}}},
        {"jobs", c.jobs},
    };
}

RunConfig run_config_from_json(const ordered_json& j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    require_key_subset(j, {"generator", "metrics", "critic", "rl", "demo", "render", "jobs"},
                       "run config");
    RunConfig c;
    if (j.contains("generator")) c.generator = gen::gen_config_from_json(j["generator"]);
    if (j.contains("metrics")) {
        const auto& m = j["metrics"];
        require_key_subset(m, {"w_bleu", "w_keyword", "w_dom", "w_attr", "keyword_boost"}, "metrics");
        read_field(m, "w_bleu", c.metric_weights.w_bleu);
        read_field(m, "w_keyword", c.metric_weights.w_keyword);
        read_field(m, "w_dom", c.metric_weights.w_dom);
        read_field(m, "w_attr", c.metric_weights.w_attr);
        read_field(m, "keyword_boost", c.metric_weights.keyword_boost);
    }
    if (j.contains("critic")) {
        const auto& cr = j["critic"];
        require_key_subset(cr, {"epochs", "lr", "bigram_dim", "position_buckets", "seed"}, "critic");
        read_field(cr, "epochs", c.critic.epochs);
        read_field(cr, "lr", c.critic.lr);
        read_field(cr, "bigram_dim", c.critic.bigram_dim);
        read_field(cr, "position_buckets", c.critic.position_buckets);
        read_field(cr, "seed", c.critic.seed);
    }
    if (j.contains("rl")) {
        const auto& r = j["rl"];
        require_key_subset(r, {"grammar", "pretrain", "finetune"}, "rl");
        if (r.contains("grammar")) {
            const auto& g = r["grammar"];
            require_key_subset(
                g, {"position_buckets", "palette_colors", "feature_grid", "max_elements", "max_len"},
                "rl.grammar");
            read_field(g, "position_buckets", c.grammar.position_buckets);
            read_field(g, "palette_colors", c.grammar.palette_colors);
            read_field(g, "feature_grid", c.grammar.feature_grid);
            read_field(g, "max_elements", c.grammar.max_elements);
            read_field(g, "max_len", c.grammar.max_len);
        }
        if (r.contains("pretrain")) {
            const auto& p = r["pretrain"];
            require_key_subset(p, {"epochs", "lr"}, "rl.pretrain");
            read_field(p, "epochs", c.pretrain.epochs);
            read_field(p, "lr", c.pretrain.lr);
        }
        if (r.contains("finetune")) {
            const auto& f = r["finetune"];
            require_key_subset(f,
                               {"epochs", "lr", "k_samples", "seed", "constant_q",
                                "baseline_subtraction", "divergence_ratio", "divergence_patience"},
                               "rl.finetune");
            read_field(f, "epochs", c.finetune.epochs);
            read_field(f, "lr", c.finetune.lr);
            read_field(f, "k_samples", c.finetune.k_samples);
            read_field(f, "seed", c.finetune.seed);
            read_field(f, "constant_q", c.finetune.constant_q);
            read_field(f, "baseline_subtraction", c.finetune.baseline_subtraction);
            read_field(f, "divergence_ratio", c.finetune.divergence_ratio);
            read_field(f, "divergence_patience", c.finetune.divergence_patience);
        }
    }
    if (j.contains("demo")) c.demo = demo_from_json(j["demo"]);
    if (j.contains("render")) {
        const auto& r = j["render"];
        require_key_subset(r, {"viewport", "text_mode"}, "render");
        if (r.contains("viewport")) {
            const auto& v = r["viewport"];
            if (!v.is_array() || v.size() != 2)
                throw ConfigError("render.viewport must be [width, height]");
            c.viewport_w = v[0].get<int>();
            c.viewport_h = v[1].get<int>();
        }
        if (r.contains("text_mode")) {
            const std::string mode = r["text_mode"].get<std::string>();
            if (mode == "box")
                c.text_mode = raster::TextMode::Box;
            else if (mode == "none")
                c.text_mode = raster::TextMode::None;
            else
                throw ConfigError("render.text_mode must be \"box\" or \"none\"");
        }
    }
    read_field(j, "jobs", c.jobs);
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    if (path.empty()) {
        RunConfig c;
        c.validate();
        return c;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    try {
        return run_config_from_json(ordered_json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
}

std::string config_hash(const RunConfig& config) { return fnv1a64_hex(to_json(config).dump()); }

} // namespace ruid::config
