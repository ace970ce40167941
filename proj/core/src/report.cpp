#include "semuq/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "semuq/error.hpp"

namespace semuq {

using nlohmann::json;

EvaluationRow evaluate_method(std::string method, std::string dataset, std::string model,
                              std::span<const LabeledScore> scores) {
  EvaluationRow row;
  row.method = std::move(method);
  row.dataset = std::move(dataset);
  row.model = std::move(model);
  row.auroc = auroc(scores);
  row.roc = roc_curve(scores);
  const RocPoint j = youden_point(row.roc);
  row.fpr_at_j = j.fpr;
  row.tpr_at_j = j.tpr;
  row.n = scores.size();
  return row;
}

namespace {

// JSON has no infinities; the open ROC endpoints are stored as null.
json threshold_to_json(double t) { return std::isfinite(t) ? json(t) : json(nullptr); }

}  // namespace

void to_json(json& j, const EvaluationRow& row) {
  json roc = json::array();
  for (const auto& p : row.roc) roc.push_back({threshold_to_json(p.threshold), p.fpr, p.tpr});
  j = json{{"method", row.method},     {"dataset", row.dataset},   {"model", row.model},
           {"auroc", row.auroc},       {"fpr_at_j", row.fpr_at_j}, {"tpr_at_j", row.tpr_at_j},
           {"n", row.n},               {"roc", roc}};
}

void from_json(const json& j, EvaluationRow& row) {
  j.at("method").get_to(row.method);
  j.at("dataset").get_to(row.dataset);
  j.at("model").get_to(row.model);
  j.at("auroc").get_to(row.auroc);
  j.at("fpr_at_j").get_to(row.fpr_at_j);
  j.at("tpr_at_j").get_to(row.tpr_at_j);
  j.at("n").get_to(row.n);
  row.roc.clear();
  const auto& roc = j.at("roc");
  for (std::size_t i = 0; i < roc.size(); ++i) {
    const auto& p = roc[i];
    double thr;
    if (p.at(0).is_null()) {
      thr = i == 0 ? -std::numeric_limits<double>::infinity()
                   : std::numeric_limits<double>::infinity();
    } else {
      thr = p.at(0).get<double>();
    }
    row.roc.push_back({thr, p.at(1).get<double>(), p.at(2).get<double>()});
  }
}

namespace {

void sort_rows(std::vector<EvaluationRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const EvaluationRow& a, const EvaluationRow& b) {
    return std::tie(a.method, a.dataset, a.model) < std::tie(b.method, b.dataset, b.model);
  });
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << contents;
  if (!out) throw Error(fmt::format("short write to '{}'", path.string()));
}

}  // namespace

std::string render_report_csv(std::vector<EvaluationRow> rows) {
  sort_rows(rows);
  std::string out = "method,dataset,model,auroc,fpr_at_j,tpr_at_j,n\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{:.4f},{:.4f},{:.4f},{}\n", csv_field(r.method),
                       csv_field(r.dataset), csv_field(r.model), r.auroc, r.fpr_at_j, r.tpr_at_j,
                       r.n);
  }
  return out;
}

std::string render_roc_svg(const std::string& method, std::span<const EvaluationRow> rows) {
  constexpr double kSize = 400.0;
  constexpr double kLeft = 60.0, kTop = 40.0;
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                            "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  auto px = [&](double fpr) { return kLeft + fpr * kSize; };
  auto py = [&](double tpr) { return kTop + (1.0 - tpr) * kSize; };

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0:.0f}\" height=\"{1:.0f}\" "
      "viewBox=\"0 0 {0:.0f} {1:.0f}\" font-family=\"sans-serif\" font-size=\"12\">\n",
      kLeft + kSize + 180.0, kTop + kSize + 60.0);
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += fmt::format("<title>ROC {}</title>\n", xml_escape(method));
  svg += fmt::format("<text x=\"{:.1f}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
                     kLeft + kSize / 2.0, xml_escape(method));
  // Axes with ticks every 0.2.
  svg += fmt::format(
      "<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" "
      "stroke=\"black\"/>\n",
      kLeft, kTop, kSize, kSize);
  for (int i = 0; i <= 5; ++i) {
    const double v = 0.2 * i;
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.1f}</text>\n",
                       px(v), kTop + kSize + 16.0, v);
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.1f}</text>\n",
                       kLeft - 6.0, py(v) + 4.0, v);
  }
  svg += fmt::format(
      "<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">False positive rate</text>\n",
      kLeft + kSize / 2.0, kTop + kSize + 40.0);
  svg += fmt::format(
      "<text x=\"16\" y=\"{:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1f})\">"
      "True positive rate</text>\n",
      kTop + kSize / 2.0, kTop + kSize / 2.0);
  svg += fmt::format(
      "<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"gray\" "
      "stroke-dasharray=\"4 4\"/>\n",
      px(0), py(0), px(1), py(1));

  std::size_t idx = 0;
  for (const auto& row : rows) {
    const char* color = kColors[idx % std::size(kColors)];
    std::string points;
    for (const auto& p : row.roc) {
      if (!points.empty()) points.push_back(' ');
      points += fmt::format("{:.2f},{:.2f}", px(p.fpr), py(p.tpr));
    }
    svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
                       color, points);
    svg += fmt::format(
        "<text x=\"{:.1f}\" y=\"{:.1f}\" fill=\"{}\">{} / {} (AUROC {:.4f})</text>\n",
        kLeft + kSize + 10.0, kTop + 14.0 + 16.0 * static_cast<double>(idx), color,
        xml_escape(row.dataset), xml_escape(row.model), row.auroc);
    ++idx;
  }
  svg += "</svg>\n";
  return svg;
}

void emit_report(std::span<const EvaluationRow> rows, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw Error(fmt::format("cannot create output directory '{}': {}", out_dir.string(),
                            ec.message()));
  }
  std::vector<EvaluationRow> sorted(rows.begin(), rows.end());
  sort_rows(sorted);
  write_file(out_dir / "report.csv", render_report_csv(sorted));

  std::map<std::string, std::vector<EvaluationRow>> by_method;
  for (const auto& r : sorted) by_method[r.method].push_back(r);
  for (const auto& [method, group] : by_method) {
    write_file(out_dir / fmt::format("roc_{}.svg", method), render_roc_svg(method, group));
  }
}

}  // namespace semuq
