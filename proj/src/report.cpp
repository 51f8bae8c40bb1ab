#include "sergan/report.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace sergan {

TsneResult project_representations(const Tensor& reps,
                                   const std::vector<std::string>& labels,
                                   const std::vector<bool>& augmented,
                                   const std::vector<std::string>& ids,
                                   const TsneConfig& cfg, std::uint64_t seed) {
  if (reps.rank() != 2) throw std::invalid_argument("project_representations: expected [N,D]");
  const std::size_t n = static_cast<std::size_t>(reps.dim(0));
  if (labels.size() != n || augmented.size() != n || ids.size() != n)
    throw std::invalid_argument("project_representations: metadata length mismatch");
  std::set<std::string> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2)
    throw std::invalid_argument("project_representations: need at least 2 classes");

  std::map<std::string, int> label_index;
  for (const auto& l : distinct) label_index.emplace(l, static_cast<int>(label_index.size()));
  std::vector<int> int_labels;
  int_labels.reserve(n);
  for (const auto& l : labels) int_labels.push_back(label_index.at(l));

  Tensor embedded = tsne_embed(reps, cfg, seed);

  TsneResult out;
  out.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.points.push_back({ids[i], labels[i], static_cast<bool>(augmented[i]),
                          embedded[i * 2], embedded[i * 2 + 1]});
  out.silhouette_2d = silhouette_score(embedded, int_labels);
  out.silhouette_highdim = silhouette_score(reps, int_labels);
  return out;
}

std::string tsne_points_csv(const TsneResult& result) {
  std::ostringstream o;
  o << "id,label,origin,x,y\n";
  o.precision(12);
  for (const auto& p : result.points)
    o << p.id << "," << p.label << "," << (p.augmented ? "augmented" : "original") << ","
      << p.x << "," << p.y << "\n";
  return o.str();
}

std::string tsne_svg(const TsneResult& result, int size_px) {
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};
  double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
  for (const auto& p : result.points) {
    lo_x = std::min(lo_x, p.x);
    hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, p.y);
    hi_y = std::max(hi_y, p.y);
  }
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9});
  const double margin = 40.0;
  auto sx = [&](double x) { return margin + (x - lo_x) / span * (size_px - 2 * margin); };
  auto sy = [&](double y) { return margin + (y - lo_y) / span * (size_px - 2 * margin); };

  std::map<std::string, std::size_t> color_of;
  for (const auto& p : result.points)
    color_of.emplace(p.label, color_of.size() % (sizeof(kPalette) / sizeof(kPalette[0])));

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size_px << "\" height=\""
    << size_px << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& p : result.points) {
    const char* color = kPalette[color_of.at(p.label)];
    if (p.augmented) {
      double cx = sx(p.x), cy = sy(p.y), r = 3.2;
      o << "<path d=\"M" << cx - r << " " << cy - r << " L" << cx + r << " " << cy + r
        << " M" << cx - r << " " << cy + r << " L" << cx + r << " " << cy - r
        << "\" stroke=\"" << color << "\" stroke-width=\"1.4\"/>\n";
    } else {
      o << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y)
        << "\" r=\"3\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.4\"/>\n";
    }
  }
  int ly = 20;
  for (const auto& [label, ci] : color_of) {
    o << "<text x=\"12\" y=\"" << ly << "\" font-size=\"13\" fill=\"" << kPalette[ci]
      << "\">" << label << "</text>\n";
    ly += 16;
  }
  o << "<text x=\"12\" y=\"" << size_px - 12 << "\" font-size=\"12\" fill=\"#333\">"
    << "silhouette(2d)=" << result.silhouette_2d
    << " silhouette(128d)=" << result.silhouette_highdim << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

// --- tables -------------------------------------------------------------------------

namespace {

struct RowKey {
  std::string group;  // cross-lingual "source->target", otherwise empty
  std::string model;
  bool operator<(const RowKey& o) const {
    return std::tie(group, model) < std::tie(o.group, o.model);
  }
};

// canonical ordering for known row names; unknown rows keep their own order
// after the known ones
int model_rank(ReportLayout layout, const std::string& model) {
  static const std::vector<std::string> imbalanced{"NoAUG", "AUG"};
  static const std::vector<std::string> ablation{"NoAUG", "L_Model", "L_Model+L_VAR",
                                                 "L_Total"};
  static const std::vector<std::string> cross{"LT", "LT_AUG", "FT", "FT_AUG"};
  const std::vector<std::string>* order = nullptr;
  switch (layout) {
    case ReportLayout::Imbalanced: order = &imbalanced; break;
    case ReportLayout::Ablation: order = &ablation; break;
    case ReportLayout::CrossLingual: order = &cross; break;
  }
  auto it = std::find(order->begin(), order->end(), model);
  return it == order->end() ? static_cast<int>(order->size())
                            : static_cast<int>(it - order->begin());
}

std::string meta_or(const EvaluationReport& rep, const std::string& key,
                    const std::string& fallback) {
  auto it = rep.metadata.find(key);
  return it == rep.metadata.end() ? fallback : it->second;
}

}  // namespace

ReportTables emit_report(const std::vector<EvaluationReport>& reports,
                         ReportLayout layout) {
  if (reports.empty()) throw std::invalid_argument("emit_report: no reports");

  // one class set across all folds
  std::vector<std::string> ref_classes;
  for (const auto& [cls, recall] : reports.front().per_class_recall)
    ref_classes.push_back(cls);
  for (const auto& rep : reports) {
    std::vector<std::string> classes;
    for (const auto& [cls, recall] : rep.per_class_recall) classes.push_back(cls);
    if (classes != ref_classes) {
      std::string a, b;
      for (const auto& c : ref_classes) a += c + " ";
      for (const auto& c : classes) b += c + " ";
      throw std::invalid_argument("emit_report: inconsistent class sets across folds: [" +
                                  a + "] vs [" + b + "]");
    }
  }

  struct Agg {
    std::map<std::string, double> recall_sum;
    double uar_sum = 0.0;
    long folds = 0;
  };
  std::map<RowKey, Agg> rows;
  for (const auto& rep : reports) {
    RowKey key;
    key.model = meta_or(rep, "model", "model");
    if (layout == ReportLayout::CrossLingual)
      key.group = meta_or(rep, "source", "?") + "->" + meta_or(rep, "target", "?");
    Agg& agg = rows[key];
    for (const auto& [cls, recall] : rep.per_class_recall) agg.recall_sum[cls] += recall;
    agg.uar_sum += rep.uar;
    ++agg.folds;
  }

  std::vector<RowKey> ordered;
  for (const auto& [key, agg] : rows) ordered.push_back(key);
  std::stable_sort(ordered.begin(), ordered.end(), [&](const RowKey& a, const RowKey& b) {
    if (a.group != b.group) return a.group < b.group;
    return model_rank(layout, a.model) < model_rank(layout, b.model);
  });

  std::ostringstream csv, md;
  csv.precision(6);
  md.precision(6);
  csv << std::fixed;
  md << std::fixed;

  bool grouped = layout == ReportLayout::CrossLingual;
  csv << (grouped ? "pair,model" : "model");
  md << (grouped ? "| pair | model |" : "| model |");
  for (const auto& c : ref_classes) {
    csv << "," << c;
    md << " " << c << " |";
  }
  csv << ",average\n";
  md << " average |\n";
  md << (grouped ? "|---|---|" : "|---|");
  for (std::size_t i = 0; i < ref_classes.size(); ++i) md << "---|";
  md << "---|\n";

  for (const auto& key : ordered) {
    const Agg& agg = rows.at(key);
    if (grouped) {
      csv << key.group << ",";
      md << "| " << key.group << " ";
    }
    csv << key.model;
    md << "| " << key.model << " |";
    for (const auto& c : ref_classes) {
      double v = agg.recall_sum.at(c) / static_cast<double>(agg.folds);
      csv << "," << v;
      md << " " << v << " |";
    }
    double uar = agg.uar_sum / static_cast<double>(agg.folds);
    csv << "," << uar << "\n";
    md << " " << uar << " |\n";
  }
  return {csv.str(), md.str()};
}

}  // namespace sergan
