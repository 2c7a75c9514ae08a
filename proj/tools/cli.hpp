#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace semiseg::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kConfig = 2, kRuntime = 3 };

/// Environment variable that relocates relative output paths.
inline constexpr const char* kOutputRootEnv = "SEMISEG_OUTPUT_ROOT";

/// Runs one command line (argv[0] is the program name) and returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Relative paths are placed under $SEMISEG_OUTPUT_ROOT when it is set.
std::filesystem::path output_path(const std::string& path);

/// Every recognised configuration key, one per line with default and meaning.
std::string config_reference();

struct Series {
  std::string name;
  std::vector<double> x, y;
};

/// Minimal SVG line chart.
std::string svg_line_chart(const std::vector<Series>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label);
/// Minimal SVG grouped bar chart; `groups[g][b]` is bar b of group g.
std::string svg_bar_chart(const std::vector<std::string>& group_names,
                          const std::vector<std::string>& bar_names,
                          const std::vector<std::vector<double>>& groups, const std::string& title);

}  // namespace semiseg::cli
