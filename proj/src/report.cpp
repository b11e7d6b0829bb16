#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>

#include "preempt/runner.hpp"
#include "preempt/util.hpp"

namespace preempt::runner {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string pct(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", value);
  return buf;
}

std::string share(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", value);
  return buf;
}

int setup_rank(const std::string& setup) {
  if (setup == "normal") return 0;
  if (setup == "upa") return 1;
  if (setup == "mpa") return 2;
  return 3;  // plugins after the built-in setups
}

int mitigation_rank(const std::string& m) {
  if (m == "none") return 0;
  if (m == "restate") return 1;
  return 2;
}

struct GroupKey {
  std::string setup;
  std::string mitigation;

  bool operator<(const GroupKey& other) const {
    if (setup_rank(setup) != setup_rank(other.setup)) {
      return setup_rank(setup) < setup_rank(other.setup);
    }
    if (setup != other.setup) return setup < other.setup;
    return mitigation_rank(mitigation) < mitigation_rank(other.mitigation);
  }
};

std::optional<GroupKey> parse_label(const std::string& label) {
  if (util::starts_with(label, "base_")) {
    std::string rest = label.substr(5);
    std::size_t cut = rest.rfind('_');
    if (cut == std::string::npos) return std::nullopt;
    return GroupKey{rest.substr(0, cut), rest.substr(cut + 1)};
  }
  if (util::starts_with(label, "reflect_")) {
    return GroupKey{label.substr(8), "reflect"};
  }
  return std::nullopt;
}

void svg_bar_chart(const fs::path& path, const std::string& title,
                   const std::vector<std::pair<std::string, double>>& bars) {
  const int width = std::max<int>(320, 40 + static_cast<int>(bars.size()) * 90);
  const int height = 320;
  const int floor_y = 260;
  const double scale = 2.0;  // 100% -> 200px
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n";
  out << "  <text x=\"20\" y=\"28\" font-family=\"sans-serif\" font-size=\"16\">" << title
      << "</text>\n";
  out << "  <line x1=\"20\" y1=\"" << floor_y << "\" x2=\"" << (width - 20) << "\" y2=\"" << floor_y
      << "\" stroke=\"#444\"/>\n";
  int x = 40;
  for (const auto& [label, value] : bars) {
    int bar_height = static_cast<int>(value * scale);
    if (bar_height < 1) bar_height = 1;
    out << "  <rect x=\"" << x << "\" y=\"" << (floor_y - bar_height)
        << "\" width=\"48\" height=\"" << bar_height << "\" fill=\"#4878a8\"/>\n";
    out << "  <text x=\"" << (x + 24) << "\" y=\"" << (floor_y - bar_height - 6)
        << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">" << pct(value)
        << "</text>\n";
    out << "  <text x=\"" << (x + 24) << "\" y=\"" << (floor_y + 18)
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << label
        << "</text>\n";
    x += 90;
  }
  out << "</svg>\n";
  util::write_file_atomic(path, out.str());
}

}  // namespace

ReportFiles emit_report(const RunManifest& manifest, bool svg) {
  std::map<GroupKey, std::vector<evalcore::RunRecord>> groups;
  for (const auto& [label, rel_path] : manifest.record_files) {
    auto key = parse_label(label);
    if (!key) continue;
    groups[*key] = evalcore::parse_records(util::read_file(manifest.root / rel_path));
  }

  json config = json::parse(manifest.config_json);

  auto baseline_it = groups.find(GroupKey{"normal", "none"});
  if (baseline_it == groups.end()) {
    throw MissingRuns("no normal/none records; nothing to compare against");
  }
  const auto& baseline = baseline_it->second;

  bool any_attacked = false;
  for (const auto& [key, records] : groups) {
    if (key.setup != "normal") any_attacked = true;
  }
  if (!any_attacked) {
    std::string absent;
    for (const auto& setup : config.value("setups", std::vector<std::string>{})) {
      if (setup == "normal") continue;
      if (!absent.empty()) absent += ", ";
      absent += "normal vs " + setup;
    }
    throw MissingRuns("no attacked runs to compare" +
                      (absent.empty() ? std::string(" (configure upa/mpa/plugin setups)")
                                      : ": missing " + absent));
  }
  const std::string method = baseline.empty() ? "zs" : baseline.front().method.label();

  // Per-group metrics against the plain normal baseline.
  std::map<GroupKey, evalcore::MetricsReport> metrics;
  for (const auto& [key, records] : groups) {
    if (key.setup == "normal" && key.mitigation == "none") continue;
    evalcore::MetricsReport report = evalcore::compute_metrics(baseline, records);
    if (key.mitigation == "reflect") {
      auto base_it = groups.find(GroupKey{key.setup, "none"});
      if (base_it != groups.end()) {
        report.reflection_counts =
            evalcore::count_reflections(baseline, base_it->second, records);
      }
    }
    metrics[key] = std::move(report);
  }

  std::ostringstream md;
  md << "# Preemptive-answer evaluation report\n\n";
  md << "- model: " << config.value("model", "?") << "\n";
  md << "- method: " << method << "\n";
  md << "- dataset: " << config.value("dataset", "?") << " (sha256 " << manifest.dataset_sha256
     << ")\n";
  md << "- problems: " << baseline.size() << "\n\n";
  md << "| Setup | Mitigation | ACC % | ASR % | flips out | flips in |\n";
  md << "|---|---|---|---|---|---|\n";

  std::size_t baseline_correct = 0;
  for (const auto& r : baseline) {
    if (r.final_correct) ++baseline_correct;
  }
  double baseline_acc = baseline.empty() ? 0.0 : 100.0 * baseline_correct / baseline.size();
  md << "| normal | none | " << pct(baseline_acc) << " | - | - | - |\n";
  for (const auto& [key, report] : metrics) {
    md << "| " << key.setup << " | " << key.mitigation << " | " << pct(report.acc_attack) << " | "
       << pct(report.asr) << " | " << report.flips_out << " | " << report.flips_in << " |\n";
  }
  md << "\nASR counts problems answered correctly under the normal setup that become\n"
        "incorrect under the attacked setup, divided by the normally-correct count.\n"
        "Raw flip counts are listed so the alternative reading (flips over n) can be\n"
        "recomputed from the same table.\n";

  ReportFiles out;
  fs::path md_path = manifest.root / "report.md";
  util::write_file_atomic(md_path, md.str());
  out.files.push_back(md_path);

  // Breakdown buckets for the plain attacked runs.
  std::ostringstream breakdown;
  breakdown << "setup,bucket,count\n";
  for (const auto& [key, report] : metrics) {
    if (key.mitigation != "none") continue;
    if (report.upa_buckets) {
      const auto& b = *report.upa_buckets;
      breakdown << key.setup << ",pre_correct_final_correct," << b.pre_correct_final_correct << "\n";
      breakdown << key.setup << ",pre_correct_final_wrong," << b.pre_correct_final_wrong << "\n";
      breakdown << key.setup << ",pre_wrong_final_correct," << b.pre_wrong_final_correct << "\n";
      breakdown << key.setup << ",pre_wrong_final_wrong," << b.pre_wrong_final_wrong << "\n";
      breakdown << key.setup << ",no_preemptive," << b.no_preemptive << "\n";
    }
    if (report.mpa_buckets) {
      breakdown << key.setup << ",final_correct," << report.mpa_buckets->final_correct << "\n";
      breakdown << key.setup << ",final_wrong," << report.mpa_buckets->final_wrong << "\n";
    }
  }
  fs::path breakdown_path = manifest.root / "breakdown.csv";
  util::write_file_atomic(breakdown_path, breakdown.str());
  out.files.push_back(breakdown_path);

  // Mitigation table in the shape of the ASR/ACC bar charts.
  std::ostringstream mitigation;
  mitigation << "setup,mitigation,acc,asr\n";
  std::vector<std::pair<std::string, double>> asr_bars;
  std::vector<std::pair<std::string, double>> acc_bars;
  for (const auto& [key, report] : metrics) {
    mitigation << key.setup << "," << key.mitigation << "," << pct(report.acc_attack) << ","
               << pct(report.asr) << "\n";
    asr_bars.emplace_back(key.setup + "/" + key.mitigation, report.asr);
    acc_bars.emplace_back(key.setup + "/" + key.mitigation, report.acc_attack);
  }
  fs::path mitigation_path = manifest.root / "mitigation.csv";
  util::write_file_atomic(mitigation_path, mitigation.str());
  out.files.push_back(mitigation_path);

  // Deltas of each mitigation against the plain attacked run.
  std::ostringstream deltas;
  deltas << "setup,mitigation,delta_acc,delta_asr\n";
  for (const auto& [key, report] : metrics) {
    if (key.mitigation == "none") continue;
    auto plain = metrics.find(GroupKey{key.setup, "none"});
    if (plain == metrics.end()) continue;
    deltas << key.setup << "," << key.mitigation << ","
           << pct(report.acc_attack - plain->second.acc_attack) << ","
           << pct(report.asr - plain->second.asr) << "\n";
  }
  fs::path deltas_path = manifest.root / "mitigation_deltas.csv";
  util::write_file_atomic(deltas_path, deltas.str());
  out.files.push_back(deltas_path);

  // Reflection categories.
  std::ostringstream reflection;
  reflection << "setup,eligible,fr,fc,sc,fr_share,fc_share,sc_share\n";
  bool have_reflection = false;
  for (const auto& [key, report] : metrics) {
    if (!report.reflection_counts) continue;
    have_reflection = true;
    const auto& c = *report.reflection_counts;
    std::size_t eligible = c.fr + c.fc + c.sc;
    double denom = eligible == 0 ? 1.0 : static_cast<double>(eligible);
    reflection << key.setup << "," << eligible << "," << c.fr << "," << c.fc << "," << c.sc << ","
               << share(100.0 * c.fr / denom) << "," << share(100.0 * c.fc / denom) << ","
               << share(100.0 * c.sc / denom) << "\n";
  }
  if (have_reflection) {
    fs::path reflection_path = manifest.root / "reflection.csv";
    util::write_file_atomic(reflection_path, reflection.str());
    out.files.push_back(reflection_path);
  }

  if (svg) {
    fs::path asr_path = manifest.root / "asr_chart.svg";
    svg_bar_chart(asr_path, "ASR (%) by setup and mitigation", asr_bars);
    out.files.push_back(asr_path);
    fs::path acc_path = manifest.root / "acc_chart.svg";
    svg_bar_chart(acc_path, "ACC (%) by setup and mitigation", acc_bars);
    out.files.push_back(acc_path);
  }

  // Machine-readable metrics, one JSON per compared group.
  std::ostringstream metrics_json;
  metrics_json << "{\n";
  bool first = true;
  for (const auto& [key, report] : metrics) {
    if (!first) metrics_json << ",\n";
    first = false;
    metrics_json << "  \"" << key.setup << "/" << key.mitigation
                 << "\": " << evalcore::metrics_report_json(report);
  }
  metrics_json << "\n}\n";
  fs::path metrics_path = manifest.root / "metrics.json";
  util::write_file_atomic(metrics_path, metrics_json.str());
  out.files.push_back(metrics_path);

  return out;
}

}  // namespace preempt::runner
