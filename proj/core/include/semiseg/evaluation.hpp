#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "semiseg/metrics.hpp"
#include "semiseg/network.hpp"
#include "semiseg/synth_data.hpp"

namespace semiseg {

/// Hard labels for one image (L, W, H): argmax over the deployed decoder.
torch::Tensor infer(InferenceModelImpl& model, const torch::Tensor& image);

struct MetricRow {
  std::int64_t repeat = 0;
  std::string sample_id;
  int domain_id = 0;
  SampleMetrics metrics;
};

/// Mean and std (n - 1 denominator, 0 for one repeat) across repeats of the
/// per-repeat sample means.
struct Aggregate {
  double mean = 0.0;
  double std = 0.0;
};

struct MetricSummary {
  std::vector<Aggregate> dice, jaccard, hd95, asd;  // per foreground class
  Aggregate mean_dice, mean_jaccard, mean_hd95, mean_asd;
};

struct MetricReport {
  std::int64_t num_classes = 0;
  std::int64_t repeats = 0;
  std::vector<MetricRow> rows;
  MetricSummary summary;
};

/// Summary of per-sample rows; undefined distances are skipped.
MetricSummary aggregate(const std::vector<MetricRow>& rows, std::int64_t num_classes);

/// Scores every sample of `split` with each export (one export per repeat).
MetricReport evaluate_split(const DatasetManifest& manifest, const std::string& split,
                            const std::vector<std::filesystem::path>& exports);

void write_metrics_csv(const MetricReport& report, const std::filesystem::path& path);
/// Reads rows written by write_metrics_csv and re-derives the summary.
MetricReport read_metrics_csv(const std::filesystem::path& path);
void write_summary_csv(const MetricReport& report, const std::filesystem::path& path);

}  // namespace semiseg
