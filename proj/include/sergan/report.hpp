#ifndef SERGAN_REPORT_HPP_
#define SERGAN_REPORT_HPP_

#include <string>
#include <vector>

#include "sergan/classifier.hpp"
#include "sergan/tsne.hpp"

namespace sergan {

// --- embedding diagnostics -----------------------------------------------------

struct TsnePoint {
  std::string id;
  std::string label;
  bool augmented = false;
  double x = 0.0;
  double y = 0.0;
};

struct TsneResult {
  std::vector<TsnePoint> points;
  double silhouette_2d = 0.0;       // over the embedded points
  double silhouette_highdim = 0.0;  // over the raw representations
};

// Embeds N representation vectors into 2-D, computing silhouette scores with
// the class labels as clusters. Requires at least two distinct labels.
TsneResult project_representations(const Tensor& reps,
                                   const std::vector<std::string>& labels,
                                   const std::vector<bool>& augmented,
                                   const std::vector<std::string>& ids,
                                   const TsneConfig& cfg, std::uint64_t seed);

// id,label,origin,x,y per point.
std::string tsne_points_csv(const TsneResult& result);
// Scatter plot: one color per class, circles for originals, crosses for
// augmented samples.
std::string tsne_svg(const TsneResult& result, int size_px = 720);

// --- result tables ---------------------------------------------------------------

enum class ReportLayout { Imbalanced, Ablation, CrossLingual };

struct ReportTables {
  std::string csv;
  std::string markdown;
};

// Aggregates per-fold evaluation reports into one table. Rows are grouped by
// metadata["model"] (cross-lingual additionally by metadata["source"] ->
// metadata["target"]); per-class recalls and the UAR are arithmetic means
// over each group's folds. All reports must share one class set.
ReportTables emit_report(const std::vector<EvaluationReport>& reports,
                         ReportLayout layout);

}  // namespace sergan

#endif  // SERGAN_REPORT_HPP_
