#pragma once

#include <string>

#include "ruid/config.hpp"
#include "ruid/metrics.hpp"

// Batch entry points behind the CLI subcommands. Each command reads and
// writes artifact files; the pure logic lives in the per-domain modules.

namespace ruid::commands {

// Dataset: code files + manifest, then a rendering pass over the manifest.
int cmd_generate(const config::RunConfig& cfg, const std::string& out_dir);

// (Re)renders every manifest record's code file to its image path.
int cmd_render(const config::RunConfig& cfg, const std::string& manifest_path);

struct EvaluateResult {
    metrics::MetricReport report;
    int n_missing = 0; // predictions scored as empty documents
};

EvaluateResult evaluate_manifest(const config::RunConfig& cfg, const std::string& manifest_path,
                                 const std::string& predictions_dir);

// Per-sample report.jsonl + summary.json under out_dir. Missing prediction
// files score as empty code and are counted, never dropped.
int cmd_evaluate(const config::RunConfig& cfg, const std::string& manifest_path,
                 const std::string& predictions_dir, const std::string& out_dir);

// Builds critic examples from prediction/ground pairs ({id}.html files when
// predictions_dir is given, seeded perturbations otherwise), trains, and
// writes the model plus held-out confusion CSVs.
int cmd_train_critic(const config::RunConfig& cfg, const std::string& manifest_path,
                     const std::string& predictions_dir, const std::string& out_dir);

// Micro-benchmark pipeline: generate, pretrain, train critic on rollouts,
// fine-tune, report before/after greedy IoU on a held-out eval set.
int cmd_rl_demo(const config::RunConfig& cfg, const std::string& out_dir);

// Aggregates an evaluation report: summary table on stdout, IoU-by-element-
// count rows as CSV.
int cmd_report(const config::RunConfig& cfg, const std::string& report_path,
               const std::string& manifest_path, const std::string& out_dir);

} // namespace ruid::commands
