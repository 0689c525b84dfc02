#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "ruid/commands.hpp"
#include "ruid/config.hpp"
#include "ruid/errors.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    uint64_t seed = 0;
    std::string out;
    int jobs = 1;
    std::string viewport;
    std::string text_mode;
};

void add_common(CLI::App* sub, CommonFlags& f) {
    sub->add_option("--config", f.config_path, "JSON config file (defaults when omitted)");
    sub->add_option("--seed", f.seed, "override every module seed");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--jobs", f.jobs, "worker threads for batch stages");
    sub->add_option("--viewport", f.viewport, "render size as WxH, e.g. 256x256");
    sub->add_option("--text-mode", f.text_mode, "element text rendering")
        ->check(CLI::IsMember({"none", "box"}));
}

std::pair<int, int> parse_viewport(const std::string& text) {
    size_t x = text.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= text.size())
        throw ruid::ConfigError("viewport must be WxH, got '" + text + "'");
    int w = 0, h = 0;
    try {
        size_t used = 0;
        w = std::stoi(text.substr(0, x), &used);
        if (used != x) throw std::invalid_argument(text);
        std::string rest = text.substr(x + 1);
        h = std::stoi(rest, &used);
        if (used != rest.size()) throw std::invalid_argument(text);
    } catch (const std::exception&) {
        throw ruid::ConfigError("viewport must be WxH, got '" + text + "'");
    }
    return {w, h};
}

ruid::config::RunConfig build_config(const CLI::App& sub, const CommonFlags& f) {
    auto cfg = ruid::config::load_run_config(f.config_path);
    if (sub.count("--seed")) {
        cfg.generator.seed = f.seed;
        cfg.critic.seed = f.seed;
        cfg.finetune.seed = f.seed;
        cfg.demo.seed = f.seed;
    }
    if (sub.count("--jobs")) cfg.jobs = f.jobs;
    if (sub.count("--viewport")) {
        auto [w, h] = parse_viewport(f.viewport);
        cfg.viewport_w = w;
        cfg.viewport_h = h;
    }
    if (sub.count("--text-mode"))
        cfg.text_mode = f.text_mode == "box" ? ruid::raster::TextMode::Box
                                             : ruid::raster::TextMode::None;
    cfg.validate();
    return cfg;
}

std::string out_or(const CommonFlags& f, const char* fallback) {
    return f.out.empty() ? fallback : f.out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic UI screenshot-to-code workbench"};
    app.require_subcommand(1);
    CommonFlags flags;

    auto* generate = app.add_subcommand("generate", "generate code files, manifest, and renders");
    add_common(generate, flags);

    std::string manifest_path;
    auto* render = app.add_subcommand("render", "re-render every manifest record's image");
    render->add_option("manifest", manifest_path, "path to manifest.jsonl")->required();
    add_common(render, flags);

    std::string predictions_dir;
    auto* evaluate = app.add_subcommand("evaluate", "score predictions against a manifest");
    evaluate->add_option("manifest", manifest_path, "path to manifest.jsonl")->required();
    evaluate->add_option("predictions", predictions_dir, "directory of {id}.html predictions")
        ->required();
    add_common(evaluate, flags);

    auto* train_critic =
        app.add_subcommand("train-critic", "fit the reward critic on prediction/ground pairs");
    train_critic->add_option("manifest", manifest_path, "path to manifest.jsonl")->required();
    train_critic->add_option("predictions", predictions_dir,
                             "directory of {id}.html predictions (seeded perturbations when omitted)");
    add_common(train_critic, flags);

    auto* rl_demo = app.add_subcommand("rl-demo", "small end-to-end policy fine-tuning benchmark");
    add_common(rl_demo, flags);

    std::string report_path;
    auto* report = app.add_subcommand("report", "aggregate an evaluation report");
    report->add_option("report", report_path, "path to report.jsonl")->required();
    report->add_option("manifest", manifest_path, "path to manifest.jsonl")->required();
    add_common(report, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (generate->parsed())
            return ruid::commands::cmd_generate(build_config(*generate, flags),
                                                out_or(flags, "out/dataset"));
        if (render->parsed())
            return ruid::commands::cmd_render(build_config(*render, flags), manifest_path);
        if (evaluate->parsed())
            return ruid::commands::cmd_evaluate(build_config(*evaluate, flags), manifest_path,
                                                predictions_dir, out_or(flags, "out/eval"));
        if (train_critic->parsed())
            return ruid::commands::cmd_train_critic(build_config(*train_critic, flags),
                                                    manifest_path, predictions_dir,
                                                    out_or(flags, "out/critic"));
        if (rl_demo->parsed())
            return ruid::commands::cmd_rl_demo(build_config(*rl_demo, flags),
                                               out_or(flags, "out/rl-demo"));
        if (report->parsed())
            return ruid::commands::cmd_report(build_config(*report, flags), report_path,
                                              manifest_path, out_or(flags, "out/report"));
    } catch (const ruid::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const ruid::DivergenceDetected& e) {
        std::fprintf(stderr, "training diverged: %s\n", e.what());
        return 4;
    } catch (const ruid::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
