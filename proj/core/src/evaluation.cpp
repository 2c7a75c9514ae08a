#include "semiseg/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "semiseg/error.hpp"
#include "semiseg/training.hpp"

namespace semiseg {

namespace fs = std::filesystem;

torch::Tensor infer(InferenceModelImpl& model, const torch::Tensor& image) {
  if (image.dim() != 3) {
    throw ValidationError("infer expects an (L, W, H) image");
  }
  torch::NoGradGuard no_grad;
  auto dtype = model.parameters().front().scalar_type();
  auto logits = model.forward(image.unsqueeze(0).unsqueeze(0).to(dtype));
  return torch::softmax(logits, 1).argmax(1).squeeze(0);
}

namespace {

using Getter = std::function<double(const SampleMetrics&)>;

Aggregate mean_std(const std::vector<double>& values) {
  std::vector<double> v;
  for (double x : values) {
    if (!std::isnan(x)) {
      v.push_back(x);
    }
  }
  if (v.empty()) {
    return {kUndefinedDistance, kUndefinedDistance};
  }
  Aggregate a;
  for (double x : v) {
    a.mean += x;
  }
  a.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) {
      ss += (x - a.mean) * (x - a.mean);
    }
    a.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return a;
}

// Sample mean within each repeat, then mean/std across repeats.
Aggregate across_repeats(const std::vector<MetricRow>& rows, const Getter& get) {
  std::int64_t repeats = 0;
  for (const auto& r : rows) {
    repeats = std::max(repeats, r.repeat + 1);
  }
  std::vector<double> sum(static_cast<std::size_t>(repeats), 0.0);
  std::vector<int> count(static_cast<std::size_t>(repeats), 0);
  for (const auto& r : rows) {
    const double v = get(r.metrics);
    if (!std::isnan(v)) {
      sum[static_cast<std::size_t>(r.repeat)] += v;
      ++count[static_cast<std::size_t>(r.repeat)];
    }
  }
  std::vector<double> means;
  for (std::size_t i = 0; i < sum.size(); ++i) {
    means.push_back(count[i] == 0 ? kUndefinedDistance : sum[i] / count[i]);
  }
  return mean_std(means);
}

}  // namespace

MetricSummary aggregate(const std::vector<MetricRow>& rows, std::int64_t num_classes) {
  MetricSummary s;
  for (std::size_t k = 0; k + 1 < static_cast<std::size_t>(num_classes); ++k) {
    s.dice.push_back(across_repeats(rows, [k](const SampleMetrics& m) { return m.dice.at(k); }));
    s.jaccard.push_back(across_repeats(rows, [k](const SampleMetrics& m) { return m.jaccard.at(k); }));
    s.hd95.push_back(across_repeats(rows, [k](const SampleMetrics& m) { return m.hd95.at(k); }));
    s.asd.push_back(across_repeats(rows, [k](const SampleMetrics& m) { return m.asd.at(k); }));
  }
  s.mean_dice = across_repeats(rows, [](const SampleMetrics& m) { return m.mean_dice; });
  s.mean_jaccard = across_repeats(rows, [](const SampleMetrics& m) { return m.mean_jaccard; });
  s.mean_hd95 = across_repeats(rows, [](const SampleMetrics& m) { return m.mean_hd95; });
  s.mean_asd = across_repeats(rows, [](const SampleMetrics& m) { return m.mean_asd; });
  return s;
}

MetricReport evaluate_split(const DatasetManifest& manifest, const std::string& split,
                            const std::vector<fs::path>& exports) {
  if (exports.empty()) {
    throw ValidationError("evaluate_split needs at least one model export");
  }
  const auto& entry = manifest.split(split);
  std::vector<std::string> ids = entry.labeled;
  if (ids.empty()) {
    throw ValidationError("split '" + split + "' has no labeled samples to score");
  }
  std::vector<VolumeSample> samples;
  for (const auto& id : ids) {
    samples.push_back(load_sample(manifest, id, true));
  }

  MetricReport report;
  report.num_classes = manifest.num_classes;
  report.repeats = static_cast<std::int64_t>(exports.size());
  for (std::size_t r = 0; r < exports.size(); ++r) {
    auto model = load_inference_model(exports[r]);
    if (model->config().num_classes != manifest.num_classes) {
      throw ConfigError(exports[r].string() + " predicts " +
                        std::to_string(model->config().num_classes) + " classes, dataset has " +
                        std::to_string(manifest.num_classes));
    }
    for (const auto& s : samples) {
      MetricRow row;
      row.repeat = static_cast<std::int64_t>(r);
      row.sample_id = s.sample_id;
      row.domain_id = s.domain_id;
      row.metrics = score_sample(infer(*model, s.image), *s.label, manifest.num_classes);
      for (auto k : row.metrics.undefined_classes) {
        std::cerr << "warning: surface distance undefined for sample " << s.sample_id << " class " << k
                  << " (empty mask); excluded from means\n";
      }
      report.rows.push_back(std::move(row));
    }
  }
  report.summary = aggregate(report.rows, report.num_classes);
  return report;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) {
    return "nan";
  }
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

double parse_double(const std::string& s) {
  if (s == "nan") {
    return kUndefinedDistance;
  }
  return std::stod(s);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    out.push_back(cell);
  }
  return out;
}

}  // namespace

void write_metrics_csv(const MetricReport& report, const fs::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw RuntimeFailure("cannot write " + path.string());
  }
  out << "repeat,sample_id,domain_id";
  for (const char* name : {"dice", "jaccard", "hd95", "asd"}) {
    for (std::int64_t k = 1; k < report.num_classes; ++k) {
      out << ',' << name << '_' << k;
    }
  }
  out << ",mean_dice,mean_jaccard,mean_hd95,mean_asd\n";
  for (const auto& r : report.rows) {
    out << r.repeat << ',' << r.sample_id << ',' << r.domain_id;
    for (const auto* v : {&r.metrics.dice, &r.metrics.jaccard, &r.metrics.hd95, &r.metrics.asd}) {
      for (double x : *v) {
        out << ',' << fmt(x);
      }
    }
    out << ',' << fmt(r.metrics.mean_dice) << ',' << fmt(r.metrics.mean_jaccard) << ','
        << fmt(r.metrics.mean_hd95) << ',' << fmt(r.metrics.mean_asd) << '\n';
  }
}

MetricReport read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  std::string line;
  std::getline(in, line);
  const auto header = split_csv(line);
  if (header.size() < 7 || (header.size() - 7) % 4 != 0 || header[0] != "repeat") {
    throw ConfigError(path.string() + " is not a metrics CSV");
  }
  MetricReport report;
  const auto fg = static_cast<std::int64_t>((header.size() - 7) / 4);
  report.num_classes = fg + 1;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw ConfigError(path.string() + ": row has " + std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(header.size()));
    }
    MetricRow row;
    row.repeat = std::stoll(cells[0]);
    row.sample_id = cells[1];
    row.domain_id = std::stoi(cells[2]);
    std::size_t c = 3;
    for (auto* v : {&row.metrics.dice, &row.metrics.jaccard, &row.metrics.hd95, &row.metrics.asd}) {
      for (std::int64_t k = 0; k < fg; ++k) {
        v->push_back(parse_double(cells[c++]));
      }
    }
    row.metrics.mean_dice = parse_double(cells[c++]);
    row.metrics.mean_jaccard = parse_double(cells[c++]);
    row.metrics.mean_hd95 = parse_double(cells[c++]);
    row.metrics.mean_asd = parse_double(cells[c++]);
    report.repeats = std::max(report.repeats, row.repeat + 1);
    report.rows.push_back(std::move(row));
  }
  report.summary = aggregate(report.rows, report.num_classes);
  return report;
}

void write_summary_csv(const MetricReport& report, const fs::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw RuntimeFailure("cannot write " + path.string());
  }
  out << "metric,class,mean,std,repeats\n";
  const auto& s = report.summary;
  auto emit = [&](const char* name, const std::vector<Aggregate>& per_class, const Aggregate& mean) {
    for (std::size_t k = 0; k < per_class.size(); ++k) {
      out << name << ',' << k + 1 << ',' << fmt(per_class[k].mean) << ',' << fmt(per_class[k].std) << ','
          << report.repeats << '\n';
    }
    out << name << ",mean," << fmt(mean.mean) << ',' << fmt(mean.std) << ',' << report.repeats << '\n';
  };
  emit("dice", s.dice, s.mean_dice);
  emit("jaccard", s.jaccard, s.mean_jaccard);
  emit("hd95", s.hd95, s.mean_hd95);
  emit("asd", s.asd, s.mean_asd);
}

}  // namespace semiseg
