#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "semiseg/error.hpp"
#include "semiseg/evaluation.hpp"
#include "semiseg/synth_data.hpp"
#include "semiseg/training.hpp"

namespace semiseg::cli {

namespace fs = std::filesystem;

fs::path output_path(const std::string& path) {
  fs::path p(path);
  const char* root = std::getenv(kOutputRootEnv);
  if (p.is_relative() && root != nullptr && *root != '\0') {
    return fs::path(root) / p;
  }
  return p;
}

std::string config_reference() {
  std::ostringstream out;
  auto section = [&out](const char* title, const std::vector<ConfigKeyDoc>& keys) {
    out << title << '\n';
    for (const auto& k : keys) {
      out << "  " << std::left << std::setw(24) << k.key << ' ' << std::setw(22) << k.default_value
          << ' ' << k.description << '\n';
    }
  };
  section("Dataset config keys (generate-data --config):", DataConfig::schema());
  out << '\n';
  section("Training config keys (train/ablate --config, override with --set key=value):",
          TrainConfig::schema());
  out << "\nRelative output paths are placed under $" << kOutputRootEnv << " when it is set.\n"
      << "Exit codes: 0 success, 1 usage, 2 configuration or input, 3 runtime failure.\n";
  return out.str();
}

namespace {

// Input path: as given if it exists, else under the output root.
fs::path input_path(const std::string& path) {
  fs::path p(path);
  if (fs::exists(p)) {
    return p;
  }
  return output_path(path);
}

KeyValueConfig load_with_overrides(const std::string& file, const std::vector<std::string>& sets) {
  KeyValueConfig kv = file.empty() ? KeyValueConfig::parse("", "<defaults>") : KeyValueConfig::load(file);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects key=value, got '" + s + "'");
    }
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return kv;
}

std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) {
    return "nan";
  }
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

void print_summary(const MetricReport& report, std::ostream& out) {
  const auto& s = report.summary;
  out << "class  dice             jaccard          hd95             asd\n";
  auto line = [&out](const std::string& name, const Aggregate& d, const Aggregate& j, const Aggregate& h,
                     const Aggregate& a) {
    out << std::left << std::setw(6) << name << ' ' << fixed(d.mean) << "+-" << fixed(d.std) << "  "
        << fixed(j.mean) << "+-" << fixed(j.std) << "  " << fixed(h.mean, 3) << "+-" << fixed(h.std, 3)
        << "  " << fixed(a.mean, 3) << "+-" << fixed(a.std, 3) << '\n';
  };
  for (std::size_t k = 0; k < s.dice.size(); ++k) {
    line(std::to_string(k + 1), s.dice[k], s.jaccard[k], s.hd95[k], s.asd[k]);
  }
  line("mean", s.mean_dice, s.mean_jaccard, s.mean_hd95, s.mean_asd);
}

MetricReport evaluate_and_write(const DatasetManifest& manifest, const std::string& split,
                                const std::vector<fs::path>& models, const fs::path& out_dir) {
  auto report = evaluate_split(manifest, split, models);
  fs::create_directories(out_dir);
  write_metrics_csv(report, out_dir / "metrics.csv");
  write_summary_csv(report, out_dir / "summary.csv");
  return report;
}

TrainConfig resolve_train_config(const KeyValueConfig& kv, std::optional<std::uint64_t> seed) {
  auto cfg = TrainConfig::from_config(kv);
  if (seed) {
    cfg.seed = *seed;
  }
  cfg.data_dir = input_path(cfg.data_dir).string();
  cfg.out_dir = output_path(cfg.out_dir).string();
  return cfg;
}

RunResult train_logged(const TrainConfig& cfg, const DatasetManifest& manifest, RunOptions options,
                       std::int64_t log_every, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  options.on_step = [&](const StepReport& r) {
    if (log_every > 0 && (r.iteration + 1) % log_every == 0) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      out << "iter " << r.iteration + 1 << " lr=" << fixed(r.lr, 5) << " total=" << fixed(r.total)
          << " deno=" << fixed(r.deno) << " diff=" << fixed(r.diff) << " mix=" << fixed(r.mix)
          << " mic=" << fixed(r.mic) << " kd=" << fixed(r.kd) << " rec=" << fixed(r.rec)
          << " corr=" << fixed(r.corr) << " (" << fixed(secs, 1) << "s)\n";
      out.flush();
    }
  };
  return run_training(cfg, manifest, options);
}

// -- generate-data ----------------------------------------------------------

struct GenerateArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  std::vector<std::string> sets;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const auto cfg = DataConfig::from_config(load_with_overrides(a.config, a.sets));
  const auto dir = output_path(a.out);
  const auto manifest = generate_dataset(cfg, a.seed, dir);
  out << "wrote " << manifest.samples.size() << " volumes of " << manifest.shape.str() << " to "
      << dir.string() << '\n';
  for (const auto& [name, split] : manifest.splits) {
    out << "  split " << name << ": " << split.labeled.size() << " labeled, " << split.unlabeled.size()
        << " unlabeled\n";
  }
  return kOk;
}

// -- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string resume;
  std::optional<std::int64_t> stop_after;
  bool eval = false;
  std::int64_t log_every = 10;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const auto cfg = resolve_train_config(load_with_overrides(a.config, a.sets), a.seed);
  const auto manifest = load_manifest(cfg.data_dir);
  RunOptions options;
  if (!a.resume.empty()) {
    options.resume = fs::path(a.resume);
  }
  options.stop_after = a.stop_after;
  const auto result = train_logged(cfg, manifest, options, a.log_every, out);
  out << "checkpoint: " << result.checkpoint.string() << '\n';
  if (!result.export_path.empty()) {
    out << "inference export: " << result.export_path.string() << '\n';
  }
  if (a.eval) {
    const auto model = result.export_path.empty() ? result.checkpoint : result.export_path;
    auto report = evaluate_and_write(manifest, cfg.eval_split, {model}, cfg.out_dir);
    print_summary(report, out);
  }
  return kOk;
}

// -- eval -------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> checkpoints;
  std::string split = "test";
  std::string data;
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  std::vector<fs::path> models;
  for (const auto& c : a.checkpoints) {
    fs::path p = input_path(c);
    if (fs::is_directory(p)) {
      p /= "model_export.pt";
    }
    if (!fs::exists(p)) {
      throw ConfigError("model file not found: " + p.string());
    }
    models.push_back(p);
  }
  const auto manifest = load_manifest(input_path(a.data));
  const fs::path out_dir =
      a.out.empty() ? models.front().parent_path() / ("eval_" + a.split) : output_path(a.out);
  auto report = evaluate_and_write(manifest, a.split, models, out_dir);
  out << "scored " << report.rows.size() << " predictions over " << report.repeats
      << " model(s); results in " << out_dir.string() << '\n';
  print_summary(report, out);
  return kOk;
}

// -- ablate -----------------------------------------------------------------

struct AblateArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string grid = "mic,kd,rec,corr";
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::int64_t log_every = 0;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) {
      out.push_back(item);
    }
  }
  return out;
}

bool& toggle(TrainConfig& cfg, const std::string& name) {
  if (name == "mic") return cfg.enable_mic;
  if (name == "kd") return cfg.enable_kd;
  if (name == "rec") return cfg.enable_rec;
  if (name == "corr") return cfg.enable_corr;
  throw ConfigError("unknown ablation toggle '" + name + "' (expected mic, kd, rec, corr)");
}

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  const auto kv = load_with_overrides(a.config, a.sets);
  const auto base = resolve_train_config(kv, std::nullopt);
  const auto names = split_list(a.grid);
  if (names.empty() || names.size() > 8) {
    throw ConfigError("--grid needs between 1 and 8 toggles");
  }
  {
    TrainConfig probe = base;
    for (const auto& n : names) {
      toggle(probe, n);
    }
  }
  const auto seeds = a.seeds.empty() ? std::vector<std::uint64_t>{base.seed} : a.seeds;
  const fs::path root = a.out.empty() ? fs::path(base.out_dir) / "ablation" : output_path(a.out);
  fs::create_directories(root);
  const auto manifest = load_manifest(base.data_dir);

  std::ofstream table(root / "ablation.csv");
  table << "row";
  for (const auto& n : names) {
    table << ',' << n;
  }
  table << ",seeds,mean_dice,std_dice,mean_hd95,mean_asd,final_total,finite\n";

  const std::size_t rows = std::size_t{1} << names.size();
  bool all_ok = true;
  for (std::size_t row = 0; row < rows; ++row) {
    // Row 0 enables every toggle; later rows switch them off in binary order.
    const auto enabled = (rows - 1) - row;
    TrainConfig cfg = base;
    std::string tag;
    for (std::size_t i = 0; i < names.size(); ++i) {
      const bool on = (enabled >> i) & 1U;
      toggle(cfg, names[i]) = on;
      tag += (tag.empty() ? "" : "_") + names[i] + (on ? "1" : "0");
    }
    std::vector<fs::path> exports;
    double final_total = std::nan("");
    bool finite = true;
    for (auto seed : seeds) {
      TrainConfig run = cfg;
      run.seed = seed;
      run.out_dir = (root / tag / ("seed_" + std::to_string(seed))).string();
      out << "[" << row + 1 << "/" << rows << "] " << tag << " seed " << seed << '\n';
      out.flush();
      try {
        auto result = train_logged(run, manifest, {}, a.log_every, out);
        exports.push_back(result.export_path);
        if (!result.reports.empty()) {
          final_total = result.reports.back().total;
        }
      } catch (const RuntimeFailure& e) {
        err << "run " << tag << " seed " << seed << " failed: " << e.what() << '\n';
        finite = false;
      }
    }
    Aggregate dice{std::nan(""), std::nan("")};
    double hd95 = std::nan(""), asd = std::nan("");
    if (finite && !exports.empty()) {
      auto report = evaluate_and_write(manifest, cfg.eval_split, exports, root / tag);
      dice = report.summary.mean_dice;
      hd95 = report.summary.mean_hd95.mean;
      asd = report.summary.mean_asd.mean;
    }
    all_ok = all_ok && finite;
    table << row;
    for (std::size_t i = 0; i < names.size(); ++i) {
      table << ',' << (((enabled >> i) & 1U) ? 1 : 0);
    }
    table << ',' << seeds.size() << ',' << fixed(dice.mean, 6) << ',' << fixed(dice.std, 6) << ','
          << fixed(hd95, 6) << ',' << fixed(asd, 6) << ',' << fixed(final_total, 6) << ','
          << (finite ? "true" : "false") << '\n';
    table.flush();
    out << "  dice " << fixed(dice.mean) << "+-" << fixed(dice.std) << (finite ? "" : " (failed)") << '\n';
  }
  out << "ablation table: " << (root / "ablation.csv").string() << '\n';
  return all_ok ? kOk : kRuntime;
}

// -- report -----------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out = "report";
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) {
        return static_cast<int>(i);
      }
    }
    return -1;
  }
};

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    auto cells = split_list(line);
    if (first) {
      t.header = cells;
      first = false;
    } else {
      t.rows.push_back(cells);
    }
  }
  return t;
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
  const auto out_dir = output_path(a.out);
  fs::create_directories(out_dir);
  const std::vector<std::string> terms = {"total", "deno", "diff", "mix", "mic", "kd", "rec", "corr"};

  std::ofstream table(out_dir / "report.csv");
  table << "run,iterations";
  for (const auto& t : terms) {
    table << ",final_" << t;
  }
  table << ",mean_dice,std_dice,mean_hd95,mean_asd\n";

  std::vector<Series> curves;
  std::vector<std::string> run_names, class_names;
  std::vector<std::vector<double>> dice_groups;
  for (const auto& r : a.runs) {
    const fs::path dir = input_path(r);
    const auto losses = read_csv(dir / "losses.csv");
    const int it_col = losses.column("iteration");
    const int total_col = losses.column("total");
    if (it_col < 0 || total_col < 0) {
      throw ConfigError((dir / "losses.csv").string() + " lacks iteration/total columns");
    }
    Series s;
    s.name = dir.filename().string().empty() ? dir.parent_path().filename().string() : dir.filename().string();
    if (s.name.rfind("seed_", 0) == 0) {
      s.name = dir.parent_path().filename().string() + "/" + s.name;
    }
    for (const auto& row : losses.rows) {
      s.x.push_back(std::stod(row[static_cast<std::size_t>(it_col)]));
      s.y.push_back(std::stod(row[static_cast<std::size_t>(total_col)]));
    }
    table << s.name << ',' << losses.rows.size();
    for (const auto& t : terms) {
      const int c = losses.column(t);
      table << ',' << (c >= 0 && !losses.rows.empty() ? losses.rows.back()[static_cast<std::size_t>(c)] : "nan");
    }

    fs::path summary_path = dir / "summary.csv";
    if (!fs::exists(summary_path)) {
      summary_path = dir / "eval_test" / "summary.csv";
    }
    std::string dice_mean = "nan", dice_std = "nan", hd = "nan", asd = "nan";
    if (fs::exists(summary_path)) {
      const auto summary = read_csv(summary_path);
      std::vector<double> per_class;
      std::vector<std::string> names;
      for (const auto& row : summary.rows) {
        if (row.size() < 4) {
          continue;
        }
        if (row[0] == "dice" && row[1] != "mean") {
          per_class.push_back(std::stod(row[2]));
          names.push_back("class " + row[1]);
        }
        if (row[1] == "mean") {
          if (row[0] == "dice") {
            dice_mean = row[2];
            dice_std = row[3];
          } else if (row[0] == "hd95") {
            hd = row[2];
          } else if (row[0] == "asd") {
            asd = row[2];
          }
        }
      }
      if (!per_class.empty()) {
        run_names.push_back(s.name);
        class_names = names;
        dice_groups.push_back(per_class);
      }
    }
    table << ',' << dice_mean << ',' << dice_std << ',' << hd << ',' << asd << '\n';
    curves.push_back(std::move(s));
  }

  std::ofstream(out_dir / "loss_curves.svg") << svg_line_chart(curves, "Total loss", "iteration", "loss");
  if (!dice_groups.empty()) {
    std::ofstream(out_dir / "dice_bars.svg") << svg_bar_chart(run_names, class_names, dice_groups,
                                                               "Per-class Dice");
  }
  out << "report for " << a.runs.size() << " run(s) in " << out_dir.string() << '\n';
  return kOk;
}

}  // namespace

// -- plotting ---------------------------------------------------------------

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string svg_line_chart(const std::vector<Series>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label) {
  constexpr double W = 720, H = 420, L = 70, R = 180, T = 40, B = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) {
        continue;
      }
      if (!any) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        any = true;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
    << "</text>\n"
    << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0;
    const double xv = x0 + (x1 - x0) * i / 4.0;
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n"
      << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << xv << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
    << xml_escape(x_label) << "</text>\n"
    << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (T + H - B) / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % std::size(kPalette)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[k].x.size(); ++i) {
      if (std::isfinite(series[k].y[i])) {
        o << px(series[k].x[i]) << ',' << py(series[k].y[i]) << ' ';
      }
    }
    o << "\"/>\n";
    const double ly = T + 16.0 * static_cast<double>(k);
    o << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << W - R + 34 << "\" y=\"" << ly + 4 << "\">" << xml_escape(series[k].name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string svg_bar_chart(const std::vector<std::string>& group_names, const std::vector<std::string>& bar_names,
                          const std::vector<std::vector<double>>& groups, const std::string& title) {
  constexpr double H = 420, L = 60, T = 40, B = 90;
  const double group_w = 28.0 * static_cast<double>(std::max<std::size_t>(bar_names.size(), 1)) + 24.0;
  const double W = L + group_w * static_cast<double>(groups.size()) + 160;
  auto py = [&](double v) { return H - B - std::clamp(v, 0.0, 1.0) * (H - T - B); };
  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
    << "</text>\n"
    << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - 150 << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(i / 4.0) + 4 << "\" text-anchor=\"end\">" << i / 4.0
      << "</text>\n";
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double gx = L + 12 + group_w * static_cast<double>(g);
    for (std::size_t b = 0; b < groups[g].size(); ++b) {
      const double v = std::isfinite(groups[g][b]) ? groups[g][b] : 0.0;
      o << "<rect x=\"" << gx + 28.0 * static_cast<double>(b) << "\" y=\"" << py(v) << "\" width=\"24\" height=\""
        << H - B - py(v) << "\" fill=\"" << kPalette[b % std::size(kPalette)] << "\"/>\n";
    }
    o << "<text x=\"" << gx << "\" y=\"" << H - B + 14 << "\" transform=\"rotate(30 " << gx << ' ' << H - B + 14
      << ")\">" << xml_escape(g < group_names.size() ? group_names[g] : "") << "</text>\n";
  }
  for (std::size_t b = 0; b < bar_names.size(); ++b) {
    const double ly = T + 16.0 * static_cast<double>(b);
    o << "<rect x=\"" << W - 140 << "\" y=\"" << ly - 8 << "\" width=\"12\" height=\"12\" fill=\""
      << kPalette[b % std::size(kPalette)] << "\"/>\n"
      << "<text x=\"" << W - 122 << "\" y=\"" << ly + 2 << "\">" << xml_escape(bar_names[b]) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// -- entry point --------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-supervised 3D segmentation on synthetic volumes"};
  app.require_subcommand(1);
  app.footer("\n" + config_reference());

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-data", "Generate a synthetic multi-domain dataset");
  g->add_option("--config", gen.config, "Dataset config file")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Dataset seed");
  g->add_option("--set", gen.sets, "Override a config key (key=value)");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", train.config, "Training config file")->required()->check(CLI::ExistingFile);
  t->add_option("--set", train.sets, "Override a config key (key=value)");
  t->add_option("--seed", train.seed, "Override the config seed");
  t->add_option("--resume", train.resume, "Resume from a checkpoint")->check(CLI::ExistingFile);
  t->add_option("--stop-after", train.stop_after, "Stop after this many total iterations");
  t->add_flag("--eval", train.eval, "Evaluate eval_split after training");
  t->add_option("--log-every", train.log_every, "Progress line interval (0: silent)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score model exports or checkpoints on a split");
  e->add_option("--checkpoint", ev.checkpoints, "Model export, checkpoint or run directory; repeat for seeds")
      ->required();
  e->add_option("--split", ev.split, "Split to score");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--out", ev.out, "Output directory for metrics.csv and summary.csv");

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "Train and evaluate every on/off combination of loss toggles");
  b->add_option("--config", ab.config, "Training config file")->required()->check(CLI::ExistingFile);
  b->add_option("--set", ab.sets, "Override a config key (key=value)");
  b->add_option("--grid", ab.grid, "Comma-separated toggles from mic,kd,rec,corr");
  b->add_option("--seeds", ab.seeds, "Seeds per row (repeats)")->delimiter(',');
  b->add_option("--out", ab.out, "Output directory");
  b->add_option("--log-every", ab.log_every, "Progress line interval (0: silent)");

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Aggregate run directories into CSV and SVG plots");
  r->add_option("--runs", rep.runs, "Run directories")->required();
  r->add_option("--out", rep.out, "Output directory");

  std::vector<const char*> argv;
  for (const auto& a : args) {
    argv.push_back(a.c_str());
  }
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, out);
    if (t->parsed()) return cmd_train(train, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (b->parsed()) return cmd_ablate(ab, out, err);
    if (r->parsed()) return cmd_report(rep, out);
  } catch (const ConfigError& ex) {
    err << "configuration error: " << ex.what() << '\n';
    return kConfig;
  } catch (const ValidationError& ex) {
    err << "invalid input: " << ex.what() << '\n';
    return kConfig;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace semiseg::cli
